"""Exactly computable ground-truth oracle and dataset curation.

The landscape is a Potts model: per-position field terms plus a sparse
set of pairwise couplings. It is deterministic, cheap to evaluate, and
epistatic enough that greedy search is non-trivial, which makes it a
reasonable desk-scale stand-in for a physics-based stability oracle.
Scores are lower-better for the continuous task.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fileio import atomic_write_text, canonical_json, pack_array, sha256_of, unpack_array
from .seqcore import (
    CONTINUOUS,
    N_SPECIAL,
    ORDINAL,
    DesirabilityOrder,
    LabeledSequence,
    SequenceDataset,
    TokenSequence,
    Vocabulary,
    hamming,
)

ORACLE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class PottsOracle:
    """Field table h[position, symbol] plus couplings J[pair, symbol_i, symbol_j]."""

    vocab: Vocabulary
    length: int
    fields: np.ndarray        # [length, n_content]
    pairs: tuple[tuple[int, int], ...]
    couplings: np.ndarray     # [n_pairs, n_content, n_content]
    seed: int

    def __post_init__(self):
        if self.fields.shape != (self.length, self.vocab.n_content):
            raise ValueError("field table shape mismatch")
        if self.couplings.shape != (len(self.pairs), self.vocab.n_content, self.vocab.n_content):
            raise ValueError("coupling table shape mismatch")
        for i, j in self.pairs:
            if not (0 <= i < self.length and 0 <= j < self.length and i != j):
                raise ValueError(f"invalid coupling pair ({i}, {j})")

    def config_digest(self) -> str:
        return sha256_of(
            {
                "length": self.length,
                "symbols": list(self.vocab.symbols),
                "n_pairs": len(self.pairs),
                "seed": self.seed,
            }
        )


def make_potts_oracle(
    vocab: Vocabulary,
    length: int,
    n_pairs: int,
    seed: int,
    field_scale: float = 1.0,
    coupling_scale: float = 0.5,
) -> PottsOracle:
    """Draw a seeded random landscape: gaussian fields and sparse gaussian couplings."""
    rng = np.random.default_rng(seed)
    s = vocab.n_content
    fields = rng.normal(0.0, field_scale, size=(length, s))
    all_pairs = [(i, j) for i in range(length) for j in range(i + 1, length)]
    if n_pairs > len(all_pairs):
        raise ValueError("n_pairs exceeds available position pairs")
    idx = rng.choice(len(all_pairs), size=n_pairs, replace=False)
    pairs = tuple(all_pairs[k] for k in sorted(idx.tolist()))
    couplings = rng.normal(0.0, coupling_scale, size=(n_pairs, s, s))
    return PottsOracle(vocab, length, fields, pairs, couplings, seed)


def _content_row(oracle: PottsOracle, x: TokenSequence) -> np.ndarray:
    if x.length != oracle.length:
        raise ValueError(f"sequence length {x.length} != oracle length {oracle.length}")
    row = np.asarray(x.tokens, dtype=np.int64) - N_SPECIAL
    if row.min() < 0 or row.max() >= oracle.vocab.n_content:
        raise ValueError("sequence contains tokens outside the oracle vocabulary")
    return row


def score(oracle: PottsOracle, x: TokenSequence) -> float:
    """Ground-truth attribute value: sum of field terms plus coupling terms."""
    row = _content_row(oracle, x)
    return float(score_many(oracle, row[None, :])[0])


def score_many(oracle: PottsOracle, rows: np.ndarray) -> np.ndarray:
    """Vectorized scoring of an [n, length] matrix of content-symbol indices."""
    rows = np.asarray(rows, dtype=np.int64)
    total = oracle.fields[np.arange(oracle.length)[None, :], rows].sum(axis=1)
    for k, (i, j) in enumerate(oracle.pairs):
        total = total + oracle.couplings[k, rows[:, i], rows[:, j]]
    return total


def score_sequences(oracle: PottsOracle, seqs: list[TokenSequence]) -> np.ndarray:
    """Ground-truth scores for a list of token sequences."""
    if not seqs:
        return np.zeros(0)
    return score_many(oracle, np.stack([_content_row(oracle, s) for s in seqs]))


@dataclass(frozen=True)
class OrdinalOracle:
    """Potts score bucketed into ordinal classes 1..C by strictly increasing edges.

    With `ascending` classes increase with the raw score; otherwise class C
    holds the lowest scores, which maps the most desirable scores of a
    lower-better landscape onto the highest class index.
    """

    base: PottsOracle
    edges: tuple[float, ...]
    ascending: bool = False

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.edges, self.edges[1:])):
            raise ValueError("class edges must be strictly increasing")

    @property
    def n_classes(self) -> int:
        return len(self.edges) + 1


def classify(oracle: OrdinalOracle, x: TokenSequence) -> int:
    return int(classify_scores(oracle, np.asarray([score(oracle.base, x)]))[0])


def classify_many(oracle: OrdinalOracle, seqs: list[TokenSequence]) -> np.ndarray:
    """Ordinal classes for a list of token sequences."""
    return classify_scores(oracle, score_sequences(oracle.base, seqs))


def classify_scores(oracle: OrdinalOracle, scores: np.ndarray) -> np.ndarray:
    """Bucket raw scores into classes; a score exactly on an edge takes the lower class."""
    edges = np.asarray(oracle.edges)
    scores = np.asarray(scores)
    if oracle.ascending:
        return 1 + (edges[None, :] < scores[:, None]).sum(axis=1)
    return oracle.n_classes - (edges[None, :] <= scores[:, None]).sum(axis=1)


def edges_from_quantiles(scores: np.ndarray, fractions: tuple[float, ...]) -> tuple[float, ...]:
    """Class edges at the given cumulative quantiles of a score sample."""
    if any(b <= a for a, b in zip(fractions, fractions[1:])):
        raise ValueError("quantile fractions must be strictly increasing")
    if any(not 0.0 < f < 1.0 for f in fractions):
        raise ValueError("quantile fractions must lie strictly inside (0, 1)")
    return tuple(float(q) for q in np.quantile(np.asarray(scores, dtype=float), fractions))


@dataclass(frozen=True)
class CurationConfig:
    """How mutants are drawn around the wild-type sequence.

    Each mutable position substitutes independently (always to a different
    symbol) with probability p; draws with more than max_mutations changes
    are discarded and resampled. The constant region is never touched.
    """

    wild_type: TokenSequence
    constant_offset: int
    constant_length: int
    n: int
    seed: int
    p: float | None = None              # default 4 / mutable length
    max_mutations: int = 8
    label_noise_sigma: float = 0.0

    def __post_init__(self):
        if not (0 <= self.constant_offset
                and self.constant_offset + self.constant_length <= self.wild_type.length):
            raise ValueError("constant region must lie inside the wild-type")
        if self.p is not None and not (0.0 < self.p <= 1.0):
            raise ValueError("substitution probability must be in (0, 1]")
        if self.n < 1:
            raise ValueError("sample count must be positive")
        if self.max_mutations < 0:
            raise ValueError("max_mutations must be non-negative")
        if self.label_noise_sigma < 0:
            raise ValueError("label noise sigma must be non-negative")

    @property
    def constant_tokens(self) -> tuple[int, ...]:
        lo = self.constant_offset
        return self.wild_type.tokens[lo:lo + self.constant_length]

    @property
    def mutable_positions(self) -> tuple[int, ...]:
        const = range(self.constant_offset, self.constant_offset + self.constant_length)
        return tuple(i for i in range(self.wild_type.length) if i not in const)

    @property
    def substitution_prob(self) -> float:
        if self.p is not None:
            return self.p
        return 4.0 / len(self.mutable_positions)

    def config_digest(self) -> str:
        return sha256_of(
            {
                "wild_type": list(self.wild_type.tokens),
                "constant_offset": self.constant_offset,
                "constant_length": self.constant_length,
                "n": self.n,
                "seed": self.seed,
                "p": self.substitution_prob,
                "max_mutations": self.max_mutations,
                "label_noise_sigma": self.label_noise_sigma,
            }
        )


def random_wild_type(vocab: Vocabulary, length: int, seed: int) -> TokenSequence:
    rng = np.random.default_rng(seed)
    return TokenSequence(tuple(int(t) for t in rng.integers(N_SPECIAL, vocab.size, size=length)))


def sample_mutant(config: CurationConfig, vocab: Vocabulary, rng: np.random.Generator) -> TokenSequence:
    """One pre-cap mutant draw: independent per-position substitution at rate p."""
    tokens = list(config.wild_type.tokens)
    p = config.substitution_prob
    for pos in config.mutable_positions:
        if rng.random() < p:
            # draw uniformly among the other content symbols
            offset = int(rng.integers(1, vocab.n_content))
            tokens[pos] = N_SPECIAL + (tokens[pos] - N_SPECIAL + offset) % vocab.n_content
    return TokenSequence(tuple(tokens))


def curate_dataset(
    config: CurationConfig,
    oracle: PottsOracle | OrdinalOracle,
    vocab: Vocabulary,
) -> SequenceDataset:
    """Draw n mutants within the mutation cap and label them with the oracle.

    Seed-deterministic: a single generator drives mutation draws, resampling,
    and (if enabled) label noise. Sharded curation would spawn child seeds
    per shard and concatenate shards in shard order.
    """
    ordinal = isinstance(oracle, OrdinalOracle)
    base = oracle.base if ordinal else oracle
    rng = np.random.default_rng(config.seed)
    seqs = []
    while len(seqs) < config.n:
        cand = sample_mutant(config, vocab, rng)
        if hamming(cand, config.wild_type) <= config.max_mutations:
            seqs.append(cand)
    rows = np.asarray([s.tokens for s in seqs], dtype=np.int64) - N_SPECIAL
    raw = score_many(base, rows)
    if config.label_noise_sigma > 0:
        raw = raw + rng.normal(0.0, config.label_noise_sigma, size=raw.shape)
    if ordinal:
        classes = classify_scores(oracle, raw)
        items = tuple(
            LabeledSequence(s, int(c), ORDINAL) for s, c in zip(seqs, classes)
        )
        return SequenceDataset(items, DesirabilityOrder.HIGHER_BETTER, oracle.n_classes)
    items = tuple(LabeledSequence(s, float(y), CONTINUOUS) for s, y in zip(seqs, raw))
    return SequenceDataset(items, DesirabilityOrder.LOWER_BETTER)


def validity_filter(x: TokenSequence, config: CurationConfig) -> bool:
    """True iff full wild-type length and the constant region is intact."""
    if x.length != config.wild_type.length:
        return False
    lo = config.constant_offset
    return x.tokens[lo:lo + config.constant_length] == config.constant_tokens


# ---------------------------------------------------------------------------
# Oracle artifact persistence: one versioned text artifact with embedded
# seed and dimensions.


def oracle_to_payload(oracle: PottsOracle | OrdinalOracle) -> dict:
    ordinal = isinstance(oracle, OrdinalOracle)
    base = oracle.base if ordinal else oracle
    payload = {
        "format_version": ORACLE_FORMAT_VERSION,
        "kind": "ordinal" if ordinal else "potts",
        "seed": base.seed,
        "length": base.length,
        "symbols": list(base.vocab.symbols),
        "fields": pack_array(base.fields),
        "pairs": [list(p) for p in base.pairs],
        "couplings": pack_array(base.couplings),
        "config_digest": base.config_digest(),
    }
    if ordinal:
        payload["edges"] = [float(e) for e in oracle.edges]
        payload["ascending"] = oracle.ascending
    return payload


def save_oracle(path: str, oracle: PottsOracle | OrdinalOracle) -> None:
    atomic_write_text(path, canonical_json(oracle_to_payload(oracle)) + "\n")


def load_oracle(path: str) -> PottsOracle | OrdinalOracle:
    import json

    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload["format_version"] != ORACLE_FORMAT_VERSION:
        raise ValueError(f"unsupported oracle format version {payload['format_version']}")
    vocab = Vocabulary(tuple(payload["symbols"]))
    base = PottsOracle(
        vocab=vocab,
        length=payload["length"],
        fields=unpack_array(payload["fields"]),
        pairs=tuple((int(i), int(j)) for i, j in payload["pairs"]),
        couplings=unpack_array(payload["couplings"]),
        seed=payload["seed"],
    )
    if payload["kind"] == "ordinal":
        return OrdinalOracle(base, tuple(payload["edges"]), payload["ascending"])
    return base
