"""Evaluation metrics for candidate pools.

Covers the full reporting surface: top-k class percentages, resampled
expected top-class percentage and expected best-value metrics (seeded
subsample/rank/score rounds), the percent-chance-of-improvement over the
training optimum, a Markov-model quality proxy, and cross-ranking of any
pool by any ranker. Every metric is bit-reproducible from (pool, oracle,
seed) and invariant to pool record order via an internal canonical sort.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fileio import canonical_json
from .oracle import OrdinalOracle, PottsOracle, classify_many, score_sequences
from .search import CandidatePool, RankedCandidate
from .seqcore import N_SPECIAL, DesirabilityOrder, TokenSequence, Vocabulary

Ranker = Callable[[list[TokenSequence]], np.ndarray]


@dataclass(frozen=True)
class ResampledMetric:
    """Mean over resampling rounds plus the standard error of that mean."""

    mean: float
    stderr: float
    rounds: int
    subsample: int
    top: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "rounds": self.rounds,
            "subsample": self.subsample,
            "top": self.top,
            "seed": self.seed,
        }


def _sequences(items) -> list[TokenSequence]:
    return [c.sequence if isinstance(c, RankedCandidate) else c for c in items]


def pct_in_class(top_k, oracle: OrdinalOracle, target_classes) -> float:
    """Percentage of a ranked list whose oracle class is in target_classes."""
    seqs = _sequences(top_k)
    if not seqs:
        raise ValueError("pct_in_class needs a non-empty list")
    targets = set(int(c) for c in target_classes)
    classes = classify_many(oracle, seqs)
    return 100.0 * sum(1 for c in classes if c in targets) / len(seqs)


def pci(top_k, oracle: PottsOracle, y_tau: float, order: DesirabilityOrder) -> float:
    """Percent of the list strictly more desirable than the threshold y_tau."""
    seqs = _sequences(top_k)
    if not seqs:
        raise ValueError("pci needs a non-empty list")
    if isinstance(oracle, OrdinalOracle):
        raise ValueError("pci is defined for continuous oracles")
    scores = score_sequences(oracle, seqs)
    if order is DesirabilityOrder.LOWER_BETTER:
        wins = scores < y_tau
    else:
        wins = scores > y_tau
    return 100.0 * float(wins.sum()) / len(seqs)


def _canonical_pool(pool: CandidatePool) -> list[RankedCandidate]:
    """Record-order-independent candidate ordering (lexicographic by tokens)."""
    return sorted(pool.candidates, key=lambda c: c.sequence.tokens)


def _pool_scores(cands: list[RankedCandidate], ranker: Ranker | None) -> np.ndarray:
    if ranker is None:
        return np.array([c.score for c in cands], dtype=np.float64)
    return np.asarray(ranker([c.sequence for c in cands]), dtype=np.float64)


def _ranked_indices(scores: np.ndarray) -> np.ndarray:
    return np.argsort(-scores, kind="stable")


def expected_top_class_pct(
    pool: CandidatePool,
    ranker: Ranker | None,
    oracle: OrdinalOracle,
    subsample: int = 1000,
    top: int = 100,
    rounds: int = 100,
    seed: int = 0,
    target_classes=None,
) -> ResampledMetric:
    """Expected percentage of target-class members among ranker-filtered tops.

    Each round draws `subsample` candidates without replacement, ranks
    them (ranker=None means the pool's stored scores), keeps `top`, and
    takes the oracle class percentage; rounds are averaged. Rejects pools
    smaller than the subsample.
    """
    cands = _canonical_pool(pool)
    n = len(cands)
    if n < subsample:
        raise ValueError(f"pool of {n} is smaller than the subsample of {subsample}")
    if target_classes is None:
        target_classes = (oracle.n_classes,)
    targets = set(int(c) for c in target_classes)
    scores = _pool_scores(cands, ranker)
    classes = classify_many(oracle, [c.sequence for c in cands])
    hits = np.isin(classes, sorted(targets))
    vals = _resample_rounds(
        n, scores, subsample, top, rounds, seed,
        lambda top_idx: 100.0 * float(hits[top_idx].mean()),
    )
    return ResampledMetric(_mean(vals), _stderr(vals), rounds, subsample, top, seed)


def expected_min(
    pool: CandidatePool,
    ranker: Ranker | None,
    oracle: PottsOracle,
    order: DesirabilityOrder,
    subsample: int = 10000,
    top: int = 10,
    rounds: int = 100,
    seed: int = 0,
) -> ResampledMetric:
    """Expected most-desirable oracle value among ranker-filtered tops.

    Rounds as in expected_top_class_pct; each round records the most
    desirable oracle score within its top slice. A subsample larger than
    the pool is clipped with a warning (rounds then coincide).
    """
    cands = _canonical_pool(pool)
    n = len(cands)
    if n == 0:
        raise ValueError("expected_min needs a non-empty pool")
    if subsample > n:
        warnings.warn(f"subsample {subsample} clipped to pool size {n}")
        subsample = n
    scores = _pool_scores(cands, ranker)
    oracle_scores = score_sequences(oracle, [c.sequence for c in cands])
    best = np.min if order is DesirabilityOrder.LOWER_BETTER else np.max
    vals = _resample_rounds(
        n, scores, subsample, top, rounds, seed,
        lambda top_idx: float(best(oracle_scores[top_idx])),
    )
    return ResampledMetric(_mean(vals), _stderr(vals), rounds, subsample, top, seed)


def top_k_oracle_mean(
    pool: CandidatePool, ranker: Ranker | None, oracle: PottsOracle, k: int
) -> float:
    """Mean oracle score of the pool's ranker-ordered top k."""
    cands = _canonical_pool(pool)
    if not cands:
        raise ValueError("top_k_oracle_mean needs a non-empty pool")
    scores = _pool_scores(cands, ranker)
    idx = _ranked_indices(scores)[: min(k, len(cands))]
    vals = score_sequences(oracle, [cands[int(i)].sequence for i in idx])
    return float(vals.mean())


def top_k_sequences(pool: CandidatePool, ranker: Ranker | None, k: int) -> list[TokenSequence]:
    """The pool's top-k sequences under the given ranker (canonical order)."""
    cands = _canonical_pool(pool)
    scores = _pool_scores(cands, ranker)
    idx = _ranked_indices(scores)[: min(k, len(cands))]
    return [cands[int(i)].sequence for i in idx]


def _resample_rounds(n, scores, subsample, top, rounds, seed, round_fn) -> np.ndarray:
    children = np.random.SeedSequence(seed).spawn(rounds)
    vals = np.empty(rounds, dtype=np.float64)
    for r in range(rounds):
        rng = np.random.default_rng(children[r])
        chosen = rng.choice(n, size=subsample, replace=False) if subsample < n else np.arange(n)
        sub_scores = scores[chosen]
        order = np.argsort(-sub_scores, kind="stable")
        top_idx = chosen[order[: min(top, subsample)]]
        vals[r] = round_fn(top_idx)
    return vals


def _mean(vals: np.ndarray) -> float:
    return float(vals.mean())


def _stderr(vals: np.ndarray) -> float:
    if len(vals) < 2:
        return 0.0
    return float(vals.std(ddof=1) / math.sqrt(len(vals)))


# ---------------------------------------------------------------------------
# Quality proxy: an order-n add-alpha Markov model fit on a reference corpus.


class MarkovQualityModel:
    """Add-alpha-smoothed fixed-order Markov model over content tokens.

    Contexts at sequence starts are padded with a start marker, so every
    position is scored under an order-`order` context. Unseen contexts
    back off to the uniform alpha/(alpha*V) distribution.
    """

    START = -1

    def __init__(self, reference: list[TokenSequence], vocab: Vocabulary, order: int = 3, alpha: float = 1.0):
        if not reference:
            raise ValueError("reference corpus must be non-empty")
        if alpha <= 0:
            raise ValueError("smoothing constant must be positive")
        self.vocab = vocab
        self.order = order
        self.alpha = alpha
        self.n_content = vocab.n_content
        self.counts: dict[tuple, np.ndarray] = {}
        for seq in reference:
            ctx = [self.START] * order
            for t in seq.tokens:
                key = tuple(ctx)
                row = self.counts.get(key)
                if row is None:
                    row = self.counts[key] = np.zeros(self.n_content, dtype=np.float64)
                row[t - N_SPECIAL] += 1
                ctx = ctx[1:] + [t]

    def _sym(self, token: int) -> int:
        return token - N_SPECIAL

    def neg_log_likelihood(self, seq: TokenSequence) -> float:
        """Mean per-token negative log-likelihood."""
        if seq.length == 0:
            return 0.0
        ctx = [self.START] * self.order
        nll = 0.0
        v = self.n_content
        for t in seq.tokens:
            row = self.counts.get(tuple(ctx))
            if row is None:
                p = 1.0 / v
            else:
                s = self._sym(t)
                p = (row[s] + self.alpha) / (row.sum() + self.alpha * v)
            nll -= math.log(p)
            ctx = ctx[1:] + [t]
        return nll / seq.length

    def perplexity(self, seq: TokenSequence) -> float:
        return math.exp(self.neg_log_likelihood(seq))


def quality_proxy(
    pool_seqs: list[TokenSequence],
    reference: list[TokenSequence],
    vocab: Vocabulary,
    order: int = 3,
    alpha: float = 1.0,
) -> float:
    """Mean per-sequence perplexity under a Markov model of the reference."""
    model = MarkovQualityModel(reference, vocab, order, alpha)
    if not pool_seqs:
        raise ValueError("quality_proxy needs at least one sequence")
    return float(np.mean([model.perplexity(s) for s in pool_seqs]))


# ---------------------------------------------------------------------------
# Reports.


@dataclass(frozen=True)
class MetricReport:
    pool_provenance: dict
    ranker_name: str
    seed: int
    metrics: dict

    def to_json(self) -> str:
        return canonical_json(
            {
                "pool_provenance": self.pool_provenance,
                "ranker": self.ranker_name,
                "seed": self.seed,
                "metrics": self.metrics,
            }
        )

    def flat_rows(self) -> list[tuple[str, float, float | None]]:
        """(metric, value, stderr-or-None) rows for the comparison table."""
        rows = []
        for name in sorted(self.metrics):
            m = self.metrics[name]
            if isinstance(m, dict) and "mean" in m:
                rows.append((name, m["mean"], m.get("stderr")))
            else:
                rows.append((name, m, None))
        return rows


def _check_vocab(seqs: list[TokenSequence], vocab: Vocabulary) -> None:
    try:
        for s in seqs:
            vocab.validate(s)
    except ValueError as e:
        raise ValueError(f"pool sequences do not match the oracle vocabulary: {e}") from e


def cross_rank_eval(
    pool: CandidatePool,
    ranker: Ranker | None,
    oracle: PottsOracle | OrdinalOracle,
    metrics_spec: dict,
    *,
    order: DesirabilityOrder,
    ranker_name: str = "native",
    seed: int = 0,
    reference: list[TokenSequence] | None = None,
) -> MetricReport:
    """Score a pool with an arbitrary ranker and compute requested metrics.

    metrics_spec maps metric names to their parameter dicts; supported
    names: pci, pct_in_class, expected_top_class_pct, expected_min,
    top_k_oracle_mean, quality_proxy. ranker=None evaluates the pool
    under its own stored scores.
    """
    base = oracle.base if isinstance(oracle, OrdinalOracle) else oracle
    _check_vocab(pool.sequences(), base.vocab)
    results: dict = {}
    for name in sorted(metrics_spec):
        params = dict(metrics_spec[name])
        if name == "pci":
            k = params.pop("k")
            tops = top_k_sequences(pool, ranker, k)
            results[name] = pci(tops, base, params.pop("y_tau"), order)
        elif name == "pct_in_class":
            k = params.pop("k")
            tops = top_k_sequences(pool, ranker, k)
            results[name] = pct_in_class(tops, oracle, params.pop("target_classes"))
        elif name == "expected_top_class_pct":
            m = expected_top_class_pct(pool, ranker, oracle, seed=seed, **params)
            results[name] = m.to_dict()
        elif name == "expected_min":
            m = expected_min(pool, ranker, base, order, seed=seed, **params)
            results[name] = m.to_dict()
        elif name == "top_k_oracle_mean":
            results[name] = top_k_oracle_mean(pool, ranker, base, params.pop("k"))
        elif name == "quality_proxy":
            if reference is None:
                raise ValueError("quality_proxy needs a reference corpus")
            results[name] = quality_proxy(pool.sequences(), reference, base.vocab, **params)
        else:
            raise ValueError(f"unknown metric {name!r}")
    return MetricReport(dict(pool.provenance), ranker_name, seed, results)


def histogram_counts(values: np.ndarray, bin_width: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Counts over bins of fixed width aligned to multiples of the width."""
    if bin_width <= 0:
        raise ValueError("bin width must be positive")
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("histogram needs at least one value")
    lo = math.floor(v.min() / bin_width) * bin_width
    hi = math.floor(v.max() / bin_width) * bin_width + bin_width
    edges = np.arange(lo, hi + 0.5 * bin_width, bin_width)
    counts, _ = np.histogram(v, bins=edges)
    return edges, counts


def spearman(a, b) -> float:
    """Spearman rank correlation with midranks for ties."""
    ra, rb = _midranks(np.asarray(a, dtype=np.float64)), _midranks(np.asarray(b, dtype=np.float64))
    ra -= ra.mean()
    rb -= rb.mean()
    denom = math.sqrt(float((ra * ra).sum()) * float((rb * rb).sum()))
    if denom == 0:
        return 0.0
    return float((ra * rb).sum() / denom)


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks
