"""Evaluation metric tests.

The resampled metrics (expected_min, expected_top_class_pct) are checked
against a from-scratch reimplementation of the subsample/rank/slice loop
that shares only the documented seed protocol; everything else is
hand-computed on pools small enough to verify on paper.
"""

import math

import numpy as np
import pytest
import scipy.stats

from seqlift.evalmetrics import (
    MarkovQualityModel,
    MetricReport,
    cross_rank_eval,
    expected_min,
    expected_top_class_pct,
    histogram_counts,
    pci,
    pct_in_class,
    quality_proxy,
    spearman,
    top_k_oracle_mean,
    top_k_sequences,
)
from seqlift.oracle import OrdinalOracle, classify_many, edges_from_quantiles, score_sequences
from seqlift.search import CandidatePool, RankedCandidate
from seqlift.seqcore import N_SPECIAL, DesirabilityOrder, TokenSequence

LEN = 12
N_SYM = 8  # matches the toy vocabulary


def rand_seqs(n, rng, length=LEN):
    out = []
    for _ in range(n):
        ids = N_SPECIAL + rng.integers(0, N_SYM, size=length)
        out.append(TokenSequence(tuple(int(t) for t in ids)))
    return out


def make_pool(seqs, scores, provenance=None):
    cands = tuple(
        RankedCandidate(sequence=s, score=float(v), source="mcmc")
        for s, v in zip(seqs, scores)
    )
    return CandidatePool(cands, provenance if provenance is not None else {"method": "mcmc"})


def shuffled_pool(pool, seed=7):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(pool))
    return CandidatePool(tuple(pool.candidates[int(i)] for i in perm), dict(pool.provenance))


# --- independent reimplementation of the resampling loop ---


def brute_rounds(scores, subsample, top, rounds, seed, round_fn):
    n = len(scores)
    children = np.random.SeedSequence(seed).spawn(rounds)
    vals = []
    for child in children:
        rng = np.random.default_rng(child)
        if subsample < n:
            chosen = rng.choice(n, size=subsample, replace=False)
        else:
            chosen = np.arange(n)
        # stable descending sort via (negated score, position) keys
        ordered = sorted(range(len(chosen)), key=lambda i: (-scores[chosen[i]], i))
        keep = [int(chosen[i]) for i in ordered[: min(top, subsample)]]
        vals.append(round_fn(keep))
    return np.asarray(vals, dtype=np.float64)


def brute_expected_min(pool, oracle, order, subsample, top, rounds, seed):
    cands = sorted(pool.candidates, key=lambda c: c.sequence.tokens)
    scores = np.array([c.score for c in cands], dtype=np.float64)
    ys = score_sequences(oracle, [c.sequence for c in cands])
    best = min if order is DesirabilityOrder.LOWER_BETTER else max
    vals = brute_rounds(
        scores, subsample, top, rounds, seed,
        lambda idx: float(best(ys[i] for i in idx)),
    )
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals)))


def brute_expected_top_class_pct(pool, ordinal, targets, subsample, top, rounds, seed):
    cands = sorted(pool.candidates, key=lambda c: c.sequence.tokens)
    scores = np.array([c.score for c in cands], dtype=np.float64)
    classes = classify_many(ordinal, [c.sequence for c in cands])
    hits = np.isin(classes, sorted(set(targets)))
    vals = brute_rounds(
        scores, subsample, top, rounds, seed,
        lambda idx: 100.0 * float(np.mean([hits[i] for i in idx])),
    )
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals)))


@pytest.fixture(scope="module")
def pool60(toy_oracle):
    rng = np.random.default_rng(42)
    seqs = rand_seqs(60, rng)
    scores = rng.standard_normal(60)
    return make_pool(seqs, scores)


@pytest.fixture(scope="module")
def ordinal(toy_oracle, toy_vocab):
    rng = np.random.default_rng(11)
    sample = score_sequences(toy_oracle, rand_seqs(200, rng))
    edges = edges_from_quantiles(sample, (0.25, 0.75))
    # lower-better landscape: class 3 = most desirable quartile
    return OrdinalOracle(toy_oracle, edges, ascending=False)


class TestPciAndPctInClass:
    def test_pci_counts_strict_wins_below_threshold(self, pool60, toy_oracle):
        seqs = pool60.sequences()[:3]
        scores = score_sequences(toy_oracle, seqs)
        assert len(set(float(s) for s in scores)) == 3
        y_tau = float(np.sort(scores)[1])
        got = pci(seqs, toy_oracle, y_tau, DesirabilityOrder.LOWER_BETTER)
        assert got == pytest.approx(100.0 / 3.0)

    def test_pci_higher_better_counts_wins_above(self, pool60, toy_oracle):
        seqs = pool60.sequences()[:3]
        y_tau = float(np.sort(score_sequences(toy_oracle, seqs))[1])
        got = pci(seqs, toy_oracle, y_tau, DesirabilityOrder.HIGHER_BETTER)
        assert got == pytest.approx(100.0 / 3.0)

    def test_pci_threshold_itself_is_not_a_win(self, pool60, toy_oracle):
        seqs = pool60.sequences()[:3]
        y_tau = float(score_sequences(toy_oracle, seqs).min())
        assert pci(seqs, toy_oracle, y_tau, DesirabilityOrder.LOWER_BETTER) == 0.0

    def test_pci_rejects_empty_and_ordinal(self, toy_oracle, ordinal, pool60):
        with pytest.raises(ValueError, match="non-empty"):
            pci([], toy_oracle, 0.0, DesirabilityOrder.LOWER_BETTER)
        with pytest.raises(ValueError, match="continuous"):
            pci(pool60.sequences()[:2], ordinal, 0.0, DesirabilityOrder.LOWER_BETTER)

    def test_pct_in_class_matches_manual_count(self, pool60, ordinal):
        seqs = pool60.sequences()[:10]
        classes = classify_many(ordinal, seqs)
        for target in (1, 2, 3):
            want = 100.0 * sum(1 for c in classes if c == target) / 10
            assert pct_in_class(seqs, ordinal, (target,)) == pytest.approx(want)

    def test_pct_in_class_union_of_targets(self, pool60, ordinal):
        seqs = pool60.sequences()[:10]
        total = sum(pct_in_class(seqs, ordinal, (t,)) for t in (1, 2, 3))
        assert total == pytest.approx(100.0)
        assert pct_in_class(seqs, ordinal, (1, 2, 3)) == pytest.approx(100.0)

    def test_pct_in_class_accepts_ranked_candidates(self, pool60, ordinal):
        cands = list(pool60.candidates[:6])
        via_cands = pct_in_class(cands, ordinal, (3,))
        via_seqs = pct_in_class([c.sequence for c in cands], ordinal, (3,))
        assert via_cands == via_seqs

    def test_pct_in_class_rejects_empty(self, ordinal):
        with pytest.raises(ValueError, match="non-empty"):
            pct_in_class([], ordinal, (3,))


class TestTopK:
    def test_matches_brute_sort(self, pool60):
        want = [c.sequence for c in sorted(pool60.candidates, key=lambda c: -c.score)[:7]]
        assert top_k_sequences(pool60, None, 7) == want

    def test_ranker_overrides_stored_scores(self, pool60):
        flipped = top_k_sequences(pool60, lambda seqs: [-s.tokens[0] for s in seqs], 60)
        stored = top_k_sequences(pool60, None, 60)
        assert set(flipped) == set(stored)
        assert flipped != stored

    def test_record_order_invariance(self, pool60):
        assert top_k_sequences(shuffled_pool(pool60), None, 9) == top_k_sequences(pool60, None, 9)

    def test_ties_break_lexicographically(self, pool60):
        seqs = pool60.sequences()[:4]
        pool = make_pool(seqs, [1.0, 1.0, 1.0, 1.0])
        got = top_k_sequences(pool, None, 2)
        assert got == sorted(seqs, key=lambda s: s.tokens)[:2]
        # shuffling the records cannot change a tie's winner
        assert top_k_sequences(shuffled_pool(pool), None, 2) == got

    def test_k_larger_than_pool(self, pool60):
        assert len(top_k_sequences(pool60, None, 10_000)) == 60

    def test_top_k_oracle_mean_is_mean_of_top_k(self, pool60, toy_oracle):
        tops = top_k_sequences(pool60, None, 8)
        want = float(np.mean(score_sequences(toy_oracle, tops)))
        assert top_k_oracle_mean(pool60, None, toy_oracle, 8) == pytest.approx(want, rel=1e-12)

    def test_top_k_oracle_mean_rejects_empty_pool(self, toy_oracle):
        with pytest.raises(ValueError, match="non-empty"):
            top_k_oracle_mean(CandidatePool((), {}), None, toy_oracle, 3)


class TestResampledMetrics:
    def test_expected_min_matches_reimplementation(self, pool60, toy_oracle):
        got = expected_min(
            pool60, None, toy_oracle, DesirabilityOrder.LOWER_BETTER,
            subsample=40, top=10, rounds=25, seed=123,
        )
        mean, stderr = brute_expected_min(
            pool60, toy_oracle, DesirabilityOrder.LOWER_BETTER, 40, 10, 25, 123
        )
        assert got.mean == mean
        assert got.stderr == stderr
        assert (got.rounds, got.subsample, got.top, got.seed) == (25, 40, 10, 123)

    def test_expected_min_higher_better_takes_max(self, pool60, toy_oracle):
        got = expected_min(
            pool60, None, toy_oracle, DesirabilityOrder.HIGHER_BETTER,
            subsample=40, top=10, rounds=25, seed=123,
        )
        mean, _ = brute_expected_min(
            pool60, toy_oracle, DesirabilityOrder.HIGHER_BETTER, 40, 10, 25, 123
        )
        assert got.mean == mean

    def test_expected_top_class_matches_reimplementation(self, pool60, ordinal):
        got = expected_top_class_pct(
            pool60, None, ordinal, subsample=40, top=10, rounds=25, seed=9
        )
        mean, stderr = brute_expected_top_class_pct(
            pool60, ordinal, (ordinal.n_classes,), 40, 10, 25, 9
        )
        assert got.mean == mean
        assert got.stderr == stderr

    def test_default_targets_are_the_top_class(self, pool60, ordinal):
        implicit = expected_top_class_pct(pool60, None, ordinal, subsample=40, top=10, rounds=10)
        explicit = expected_top_class_pct(
            pool60, None, ordinal, subsample=40, top=10, rounds=10,
            target_classes=(ordinal.n_classes,),
        )
        assert implicit.to_dict() == explicit.to_dict()

    def test_tied_scores_resolve_stably(self, pool60, ordinal):
        scores = np.repeat(np.arange(6.0), 10)  # blocks of equal ranker scores
        pool = make_pool(pool60.sequences(), scores)
        got = expected_top_class_pct(pool, None, ordinal, subsample=40, top=10, rounds=25, seed=3)
        mean, stderr = brute_expected_top_class_pct(
            pool, ordinal, (ordinal.n_classes,), 40, 10, 25, 3
        )
        assert got.mean == mean
        assert got.stderr == stderr

    def test_record_order_invariance(self, pool60, toy_oracle):
        a = expected_min(
            pool60, None, toy_oracle, DesirabilityOrder.LOWER_BETTER,
            subsample=40, top=10, rounds=15, seed=5,
        )
        b = expected_min(
            shuffled_pool(pool60), None, toy_oracle, DesirabilityOrder.LOWER_BETTER,
            subsample=40, top=10, rounds=15, seed=5,
        )
        assert a.to_dict() == b.to_dict()

    def test_seed_determinism_and_sensitivity(self, pool60, ordinal):
        kw = dict(subsample=40, top=10, rounds=15)
        a = expected_top_class_pct(pool60, None, ordinal, seed=1, **kw)
        b = expected_top_class_pct(pool60, None, ordinal, seed=1, **kw)
        c = expected_top_class_pct(pool60, None, ordinal, seed=2, **kw)
        assert a.to_dict() == b.to_dict()
        assert a.stderr > 0.0
        assert (a.mean, a.stderr) != (c.mean, c.stderr)

    def test_oversized_subsample_clips_with_warning(self, pool60, toy_oracle):
        with pytest.warns(UserWarning, match="clipped"):
            got = expected_min(
                pool60, None, toy_oracle, DesirabilityOrder.LOWER_BETTER,
                subsample=500, top=10, rounds=8, seed=0,
            )
        # all rounds now see the whole pool, so they coincide
        assert got.subsample == 60
        assert got.stderr == 0.0
        tops = top_k_sequences(pool60, None, 10)
        assert got.mean == pytest.approx(float(score_sequences(toy_oracle, tops).min()))

    def test_pool_smaller_than_subsample_rejected(self, pool60, ordinal):
        with pytest.raises(ValueError, match="smaller than the subsample"):
            expected_top_class_pct(pool60, None, ordinal, subsample=61)

    def test_empty_pool_rejected(self, toy_oracle):
        with pytest.raises(ValueError, match="non-empty"):
            expected_min(CandidatePool((), {}), None, toy_oracle, DesirabilityOrder.LOWER_BETTER)


class TestMarkovQualityModel:
    def seq(self, *symbols):
        return TokenSequence(tuple(N_SPECIAL + s for s in symbols))

    def test_hand_counted_probabilities(self, toy_vocab):
        # reference AB, AC with order 1 and alpha 1 over 8 symbols:
        # start->A twice, A->B once, A->C once
        model = MarkovQualityModel(
            [self.seq(0, 1), self.seq(0, 2)], toy_vocab, order=1, alpha=1.0
        )
        p_a_start = (2 + 1) / (2 + 8)
        p_b_a = (1 + 1) / (2 + 8)
        want = -(math.log(p_a_start) + math.log(p_b_a)) / 2
        assert model.neg_log_likelihood(self.seq(0, 1)) == pytest.approx(want, rel=1e-12)
        assert model.perplexity(self.seq(0, 1)) == pytest.approx(math.exp(want), rel=1e-12)

    def test_unseen_context_backs_off_to_uniform(self, toy_vocab):
        model = MarkovQualityModel(
            [self.seq(0, 1), self.seq(0, 2)], toy_vocab, order=1, alpha=1.0
        )
        p_b_start = (0 + 1) / (2 + 8)
        want = -(math.log(p_b_start) + math.log(1 / 8)) / 2
        assert model.neg_log_likelihood(self.seq(1, 0)) == pytest.approx(want, rel=1e-12)

    def test_higher_order_context_window(self, toy_vocab):
        # order 2: the context for the third token is the exact bigram
        model = MarkovQualityModel([self.seq(0, 1, 2)], toy_vocab, order=2, alpha=1.0)
        want = -(
            math.log((1 + 1) / (1 + 8))  # (start, start) -> A
            + math.log((1 + 1) / (1 + 8))  # (start, A) -> B
            + math.log((1 + 1) / (1 + 8))  # (A, B) -> C
        ) / 3
        assert model.neg_log_likelihood(self.seq(0, 1, 2)) == pytest.approx(want, rel=1e-12)
        assert model.neg_log_likelihood(self.seq(1, 1, 2)) == pytest.approx(
            -(math.log(1 / 9) + math.log(1 / 8) + math.log(1 / 8)) / 3, rel=1e-12
        )

    def test_empty_sequence_scores_zero(self, toy_vocab):
        model = MarkovQualityModel([self.seq(0, 1)], toy_vocab, order=1)
        empty = TokenSequence(())
        assert model.neg_log_likelihood(empty) == 0.0
        assert model.perplexity(empty) == 1.0

    def test_validation(self, toy_vocab):
        with pytest.raises(ValueError, match="non-empty"):
            MarkovQualityModel([], toy_vocab)
        with pytest.raises(ValueError, match="positive"):
            MarkovQualityModel([self.seq(0)], toy_vocab, alpha=0.0)

    def test_quality_proxy_is_mean_perplexity(self, toy_vocab):
        reference = [self.seq(0, 1, 2, 3), self.seq(0, 1, 3, 2), self.seq(2, 1, 0, 3)]
        pool_seqs = [self.seq(0, 1, 2), self.seq(3, 3)]
        model = MarkovQualityModel(reference, toy_vocab, order=2, alpha=0.5)
        want = float(np.mean([model.perplexity(s) for s in pool_seqs]))
        got = quality_proxy(pool_seqs, reference, toy_vocab, order=2, alpha=0.5)
        assert got == pytest.approx(want, rel=1e-12)

    def test_quality_proxy_rejects_empty_pool(self, toy_vocab):
        with pytest.raises(ValueError, match="at least one"):
            quality_proxy([], [self.seq(0)], toy_vocab)

    def test_memorized_corpus_beats_shuffled_one(self, toy_vocab):
        rng = np.random.default_rng(0)
        reference = rand_seqs(200, rng)
        scrambled = rand_seqs(50, np.random.default_rng(1))
        inliers = quality_proxy(reference[:50], reference, toy_vocab, order=1)
        outliers = quality_proxy(scrambled, reference, toy_vocab, order=1)
        assert inliers < outliers


class TestSpearman:
    def test_perfect_and_reversed(self):
        a = [1.0, 2.0, 5.0, 9.0]
        assert spearman(a, [10.0, 20.0, 21.0, 30.0]) == pytest.approx(1.0)
        assert spearman(a, [4.0, 3.0, 2.0, 1.0]) == pytest.approx(-1.0)

    def test_constant_input_gives_zero(self):
        assert spearman([1.0, 1.0, 1.0], [1.0, 2.0, 3.0]) == 0.0

    def test_hand_computed_midranks(self):
        # ranks of [1,2,2,3] are [1, 2.5, 2.5, 4]; against [1,2,3,4]:
        # cov 4.5, variances 4.5 and 5.0
        want = 4.5 / math.sqrt(4.5 * 5.0)
        assert spearman([1, 2, 2, 3], [1, 2, 3, 4]) == pytest.approx(want, rel=1e-12)

    def test_matches_scipy_with_ties(self):
        rng = np.random.default_rng(17)
        for _ in range(5):
            a = rng.integers(0, 6, size=30).astype(float)
            b = rng.integers(0, 6, size=30).astype(float) + 0.1 * a
            want = scipy.stats.spearmanr(a, b).statistic
            assert spearman(a, b) == pytest.approx(want, rel=1e-12)


class TestHistogramCounts:
    def test_unit_bins(self):
        edges, counts = histogram_counts(np.array([0.2, 1.7, 2.3]), 1.0)
        assert edges.tolist() == [0.0, 1.0, 2.0, 3.0]
        assert counts.tolist() == [1, 1, 1]

    def test_negative_values(self):
        edges, counts = histogram_counts(np.array([-0.5, 0.4]), 1.0)
        assert edges.tolist() == [-1.0, 0.0, 1.0]
        assert counts.tolist() == [1, 1]

    def test_edges_align_to_width_multiples(self):
        edges, _ = histogram_counts(np.array([2.5, 3.2]), 1.0)
        assert edges.tolist() == [2.0, 3.0, 4.0]
        edges, counts = histogram_counts(np.array([0.6, 0.8]), 0.5)
        assert edges.tolist() == [0.5, 1.0]
        assert counts.tolist() == [2]

    def test_single_value(self):
        edges, counts = histogram_counts(np.array([5.0]), 1.0)
        assert edges.tolist() == [5.0, 6.0]
        assert counts.tolist() == [1]

    def test_total_count_preserved(self):
        rng = np.random.default_rng(2)
        v = rng.normal(size=500) * 10
        _, counts = histogram_counts(v, 2.5)
        assert counts.sum() == 500

    def test_validation(self):
        with pytest.raises(ValueError, match="positive"):
            histogram_counts(np.array([1.0]), 0.0)
        with pytest.raises(ValueError, match="at least one"):
            histogram_counts(np.array([]), 1.0)


class TestCrossRankEval:
    SPEC = {
        "pci": {"k": 10, "y_tau": 0.0},
        "pct_in_class": {"k": 10, "target_classes": (3,)},
        "expected_top_class_pct": {"subsample": 40, "top": 10, "rounds": 10},
        "expected_min": {"subsample": 40, "top": 10, "rounds": 10},
        "top_k_oracle_mean": {"k": 10},
    }

    def test_report_matches_direct_calls(self, pool60, ordinal, toy_oracle):
        report = cross_rank_eval(
            pool60, None, ordinal, self.SPEC,
            order=DesirabilityOrder.LOWER_BETTER, ranker_name="stored", seed=21,
        )
        tops = top_k_sequences(pool60, None, 10)
        m = report.metrics
        assert m["pci"] == pci(tops, toy_oracle, 0.0, DesirabilityOrder.LOWER_BETTER)
        assert m["pct_in_class"] == pct_in_class(tops, ordinal, (3,))
        assert m["top_k_oracle_mean"] == top_k_oracle_mean(pool60, None, toy_oracle, 10)
        assert m["expected_min"] == expected_min(
            pool60, None, toy_oracle, DesirabilityOrder.LOWER_BETTER,
            subsample=40, top=10, rounds=10, seed=21,
        ).to_dict()
        assert m["expected_top_class_pct"] == expected_top_class_pct(
            pool60, None, ordinal, subsample=40, top=10, rounds=10, seed=21
        ).to_dict()
        assert report.ranker_name == "stored"
        assert report.seed == 21
        assert report.pool_provenance == {"method": "mcmc"}

    def test_ranker_recomputing_stored_scores_changes_nothing(self, pool60, ordinal):
        by_tokens = {c.sequence.tokens: c.score for c in pool60.candidates}
        ranker = lambda seqs: np.array([by_tokens[s.tokens] for s in seqs])
        a = cross_rank_eval(
            pool60, None, ordinal, self.SPEC, order=DesirabilityOrder.LOWER_BETTER
        )
        b = cross_rank_eval(
            pool60, ranker, ordinal, self.SPEC, order=DesirabilityOrder.LOWER_BETTER
        )
        assert a.metrics == b.metrics

    def test_json_stable_under_record_shuffle(self, pool60, ordinal):
        kw = dict(order=DesirabilityOrder.LOWER_BETTER, seed=4)
        a = cross_rank_eval(pool60, None, ordinal, self.SPEC, **kw)
        b = cross_rank_eval(shuffled_pool(pool60), None, ordinal, self.SPEC, **kw)
        assert a.to_json() == b.to_json()

    def test_quality_proxy_needs_reference(self, pool60, ordinal):
        spec = {"quality_proxy": {"order": 1}}
        with pytest.raises(ValueError, match="reference"):
            cross_rank_eval(pool60, None, ordinal, spec, order=DesirabilityOrder.LOWER_BETTER)
        reference = rand_seqs(30, np.random.default_rng(8))
        report = cross_rank_eval(
            pool60, None, ordinal, spec,
            order=DesirabilityOrder.LOWER_BETTER, reference=reference,
        )
        assert report.metrics["quality_proxy"] == pytest.approx(
            quality_proxy(pool60.sequences(), reference, ordinal.base.vocab, order=1)
        )

    def test_unknown_metric_rejected(self, pool60, ordinal):
        with pytest.raises(ValueError, match="unknown metric"):
            cross_rank_eval(
                pool60, None, ordinal, {"novelty": {}}, order=DesirabilityOrder.LOWER_BETTER
            )

    def test_foreign_vocabulary_rejected(self, toy_oracle):
        alien = make_pool(
            [TokenSequence(tuple(N_SPECIAL + N_SYM for _ in range(LEN)))], [0.0]
        )
        with pytest.raises(ValueError, match="vocabulary"):
            cross_rank_eval(
                alien, None, toy_oracle, {"top_k_oracle_mean": {"k": 1}},
                order=DesirabilityOrder.LOWER_BETTER,
            )

    def test_flat_rows_shape_and_sorting(self):
        report = MetricReport(
            {"method": "x"}, "native", 0,
            {
                "b_metric": 2.0,
                "a_metric": {"mean": 1.5, "stderr": 0.1, "rounds": 3, "subsample": 4, "top": 1, "seed": 0},
            },
        )
        assert report.flat_rows() == [("a_metric", 1.5, 0.1), ("b_metric", 2.0, None)]

    def test_encoder_ranker_consistent_with_stored_scores(self, toy_genhance, toy_dataset):
        from seqlift.search import encoder_ranker

        ranker = encoder_ranker(toy_genhance.module.encoder)
        seqs = [it.sequence for it in toy_dataset.items[:12]]
        pool = make_pool(seqs, ranker(seqs))
        assert top_k_sequences(pool, ranker, 5) == top_k_sequences(pool, None, 5)
