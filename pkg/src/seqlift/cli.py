"""Command line driver for the full pipeline.

Verbs walk the artifact chain in order: make-oracle -> curate -> train ->
sample -> evaluate -> report. Every verb takes --config/--out and leaves
seed-deterministic files, so any stage can be re-run bit-identically.
Artifacts that are expensive to produce (oracle, dataset, runs, pools) are
never overwritten without --force; derived reports regenerate freely.

Exit codes: 0 success, 2 bad configuration or arguments, 3 missing or
conflicting artifacts, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import glob
import os
import sys
import time

import numpy as np

from .config import (
    ConfigError,
    ExperimentConfig,
    derive_seed,
    load_config,
    to_plain,
)
from .evalmetrics import cross_rank_eval, histogram_counts, top_k_sequences
from .fileio import atomic_write_text, canonical_json, format_float
from .model import Checkpoint, load_checkpoint
from .oracle import (
    CurationConfig,
    OrdinalOracle,
    PottsOracle,
    curate_dataset,
    edges_from_quantiles,
    load_oracle,
    make_potts_oracle,
    oracle_to_payload,
    random_wild_type,
    save_oracle,
    score_sequences,
)
from .search import (
    CandidatePool,
    ProposalOperator,
    encoder_ranker,
    gendisc_sample,
    genhance_sample,
    load_pool,
    mcmc_run,
    rank,
    save_pool,
)
from .seqcore import (
    DesirabilityOrder,
    SequenceDataset,
    SplitPolicy,
    Vocabulary,
    extrapolation_split,
    load_dataset,
    save_dataset,
)
from .trainer import ablation_variants, most_desirable_subset, train_gendisc, train_genhance
from . import plots

EXIT_CONFIG = 2
EXIT_ARTIFACT = 3
EXIT_RUNTIME = 4

TRAIN_METHODS = ("genhance", "genhance-nocc", "genhance-nosmoothcc", "gendisc")
SAMPLE_METHODS = ("genhance", "gendisc", "mcmc-random", "mcmc-infill")

# column order of the comparison table
COMPARISON_METRICS = (
    "pci",
    "pct_in_class",
    "expected_top_class_pct",
    "expected_min",
    "top_k_oracle_mean",
    "quality_proxy",
)
RESAMPLED_METRICS = frozenset({"expected_top_class_pct", "expected_min"})


class ArtifactError(RuntimeError):
    """A required artifact is missing, or writing would clobber one."""


class Workspace:
    """Fixed directory layout under the --out root."""

    def __init__(self, root: str):
        self.root = root
        self.oracle_path = os.path.join(root, "oracle.json")
        self.dataset_dir = os.path.join(root, "dataset")
        self.train_path = os.path.join(self.dataset_dir, "train.tsv")
        self.excluded_path = os.path.join(self.dataset_dir, "excluded.tsv")
        self.metadata_path = os.path.join(self.dataset_dir, "metadata.json")
        self.runs_dir = os.path.join(root, "runs")
        self.pools_dir = os.path.join(root, "pools")
        self.reports_dir = os.path.join(root, "reports")
        self.figures_dir = os.path.join(self.reports_dir, "figures")

    def run_dir(self, name: str) -> str:
        return os.path.join(self.runs_dir, name)

    def pool_path(self, name: str) -> str:
        return os.path.join(self.pools_dir, name + ".tsv")


def _vocab(cfg: ExperimentConfig) -> Vocabulary:
    return Vocabulary(tuple(cfg.oracle.symbols))


def _curation_config(cfg: ExperimentConfig, vocab: Vocabulary) -> CurationConfig:
    wild = random_wild_type(vocab, cfg.oracle.length, cfg.curation.wild_type_seed)
    return CurationConfig(
        wild_type=wild,
        constant_offset=cfg.curation.constant_offset,
        constant_length=cfg.curation.constant_length,
        n=cfg.curation.n,
        seed=cfg.curation.seed,
        p=cfg.curation.substitution_prob,
        max_mutations=cfg.curation.max_mutations,
        label_noise_sigma=cfg.curation.label_noise_sigma,
    )


def _split_policy(cfg: ExperimentConfig) -> SplitPolicy | None:
    s = cfg.split
    if s.mode == "none":
        return None
    if s.mode == "exclude-top-fraction":
        return SplitPolicy(exclude_top_fraction=s.fraction, keep=s.keep, seed=s.seed)
    return SplitPolicy(exclude_classes=s.classes, keep=s.keep, seed=s.seed)


def _require(path: str, hint: str) -> None:
    if not os.path.exists(path):
        raise ArtifactError(f"{path} not found; {hint}")


def _load_oracle(ws: Workspace) -> PottsOracle:
    _require(ws.oracle_path, "run make-oracle first")
    oracle = load_oracle(ws.oracle_path)
    if isinstance(oracle, OrdinalOracle):
        oracle = oracle.base
    return oracle


def _load_train(ws: Workspace, vocab: Vocabulary) -> SequenceDataset:
    _require(ws.train_path, "run curate first")
    return load_dataset(ws.train_path, vocab, DesirabilityOrder.LOWER_BETTER)


def _refuse_overwrite(path: str, force: bool) -> None:
    if os.path.exists(path) and not force:
        raise ArtifactError(f"{path} already exists; pass --force to replace it")


def _load_run_checkpoint(ws: Workspace, run: str, filename: str) -> Checkpoint:
    path = os.path.join(ws.run_dir(run), filename)
    _require(path, f"train the {run!r} run first")
    return load_checkpoint(path)


# ---------------------------------------------------------------------------
# Verbs.


def cmd_make_oracle(cfg: ExperimentConfig, ws: Workspace, args) -> int:
    vocab = _vocab(cfg)
    o = cfg.oracle
    oracle = make_potts_oracle(vocab, o.length, o.n_pairs, o.seed, o.field_scale, o.coupling_scale)
    text = canonical_json(oracle_to_payload(oracle)) + "\n"
    if os.path.exists(ws.oracle_path):
        with open(ws.oracle_path, "r", encoding="utf-8") as fh:
            if fh.read() == text:
                print(f"{ws.oracle_path} unchanged (digest {oracle.config_digest()[:12]})")
                return 0
        if not args.force:
            raise ArtifactError(
                f"{ws.oracle_path} holds a different landscape; pass --force to replace it"
            )
    save_oracle(ws.oracle_path, oracle)
    print(f"wrote {ws.oracle_path} (digest {oracle.config_digest()[:12]})")
    return 0


def cmd_curate(cfg: ExperimentConfig, ws: Workspace, args) -> int:
    vocab = _vocab(cfg)
    oracle = _load_oracle(ws)
    _refuse_overwrite(ws.train_path, args.force)
    ccfg = _curation_config(cfg, vocab)
    dataset = curate_dataset(ccfg, oracle, vocab)
    policy = _split_policy(cfg)
    if policy is None:
        train, excluded = dataset, None
    else:
        train, excluded = extrapolation_split(dataset, policy)
    os.makedirs(ws.dataset_dir, exist_ok=True)
    save_dataset(ws.train_path, train, vocab)
    if excluded is not None:
        save_dataset(ws.excluded_path, excluded, vocab)
    elif os.path.exists(ws.excluded_path):
        os.remove(ws.excluded_path)
    labels = train.labels().astype(np.float64)
    meta = {
        "format_version": 1,
        "oracle_digest": oracle.config_digest(),
        "curation_digest": ccfg.config_digest(),
        "wild_type": vocab.render(ccfg.wild_type),
        "symbols": list(vocab.symbols),
        "label_kind": train.label_kind,
        "n_curated": len(dataset),
        "n_train": len(train),
        "n_excluded": 0 if excluded is None else len(excluded),
        "y_tau": float(train.y_tau),
        "label_mean": float(labels.mean()),
        "label_std": float(labels.std()),
        "label_min": float(labels.min()),
        "label_max": float(labels.max()),
        "split": to_plain(cfg.split),
    }
    atomic_write_text(ws.metadata_path, canonical_json(meta) + "\n")
    print(f"curated {len(dataset)} sequences -> {len(train)} train"
          + (f" + {len(excluded)} excluded" if excluded is not None else ""))
    print(f"wrote {ws.train_path}")
    print(f"y_tau {format_float(meta['y_tau'])}, train label mean {format_float(meta['label_mean'])}")
    return 0


def cmd_train(cfg: ExperimentConfig, ws: Workspace, args) -> int:
    vocab = _vocab(cfg)
    dataset = _load_train(ws, vocab)
    seed = args.seed
    method = args.method
    run = args.run or f"{method}-seed{seed}"
    run_dir = ws.run_dir(run)
    if os.path.isdir(run_dir) and os.listdir(run_dir) and not args.force:
        raise ArtifactError(f"{run_dir} is non-empty; pass --force to retrain into it")
    model_config = cfg.model.to_model_config(
        cfg.oracle.symbols, cfg.sample.genhance.decode, derive_seed(seed, f"model:{method}")
    )
    t0 = time.monotonic()
    if method == "gendisc":
        tc = cfg.train_gendisc.to_train_config(derive_seed(seed, "train:gendisc"))
        gen_ck, disc_ck = train_gendisc(dataset, model_config, tc, run_dir=run_dir)
        print(f"wrote {run_dir} (generator {gen_ck.digest[:12]}, "
              f"discriminator {disc_ck.digest[:12]})")
    else:
        tc = cfg.train.to_train_config(derive_seed(seed, f"train:{method}"))
        if method == "genhance-nocc":
            tc = ablation_variants(tc, no_cc=True)
        elif method == "genhance-nosmoothcc":
            tc = ablation_variants(tc, no_cc=True, no_smooth=True)
        ck = train_genhance(dataset, model_config, tc, run_dir=run_dir)
        print(f"wrote {run_dir} (checkpoint {ck.digest[:12]})")
    print(f"trained {method} seed {seed} in {time.monotonic() - t0:.1f}s "
          f"on {len(dataset)} sequences")
    return 0


def cmd_sample(cfg: ExperimentConfig, ws: Workspace, args) -> int:
    vocab = _vocab(cfg)
    dataset = _load_train(ws, vocab)
    validity = _curation_config(cfg, vocab)
    seed = args.seed
    method = args.method
    pool_name = args.pool or (args.run or f"{method}-seed{seed}")
    path = ws.pool_path(pool_name)
    _refuse_overwrite(path, args.force)

    if method == "genhance":
        sp = cfg.sample.genhance
        run = args.run or f"genhance-seed{seed}"
        ck = _load_run_checkpoint(ws, run, "checkpoint.json")
        seeds = [it.sequence for it in most_desirable_subset(dataset, sp.seed_top_fraction).items]
        n = args.n or sp.n
        pool = genhance_sample(
            ck, seeds, sp.delta_fraction, n, sp.decode.to_decode_spec(),
            validity=validity, seed=derive_seed(seed, f"sample:{run}"),
        )
    elif method == "gendisc":
        sp = cfg.sample.gendisc
        run = args.run or f"gendisc-seed{seed}"
        gen_ck = _load_run_checkpoint(ws, run, "generator.json")
        disc_ck = _load_run_checkpoint(ws, run, "discriminator.json")
        n = args.n or sp.n
        pool = gendisc_sample(
            gen_ck, disc_ck, n, sp.decode.to_decode_spec(),
            validity=validity, seed=derive_seed(seed, f"sample:{run}"),
        )
    else:
        msp = cfg.sample.mcmc_random if method == "mcmc-random" else cfg.sample.mcmc_infill
        run = args.run or f"gendisc-seed{seed}"
        disc_ck = _load_run_checkpoint(ws, run, "discriminator.json")
        ranker = encoder_ranker(disc_ck.module)
        tops = [it.sequence for it in most_desirable_subset(dataset, msp.init_top_fraction).items]
        inits = [tops[i % len(tops)] for i in range(msp.chains)]
        if method == "mcmc-random":
            proposal = ProposalOperator(
                "uniform", vocab, validity.mutable_positions, spans=msp.spans
            )
        else:
            gen_ck = _load_run_checkpoint(ws, run, "generator.json")
            proposal = ProposalOperator(
                "infill", vocab, validity.mutable_positions, spans=msp.spans,
                generator=gen_ck.module,
            )
        raw = mcmc_run(
            ranker, inits, proposal, msp.temperature, msp.iterations, msp.edit_cap,
            seed=derive_seed(seed, f"sample:{method}"),
            validity=validity,
            provenance={"ranker": disc_ck.digest, "init": "train-top-fraction"},
        )
        n = args.n or msp.n
        valid = CandidatePool(
            tuple(c for c in raw.candidates if c.valid), raw.provenance
        )
        if len(valid.candidates) < n:
            raise RuntimeError(
                f"chains yielded {len(valid.candidates)} valid candidates < n={n}; "
                "increase chains or iterations"
            )
        pool = CandidatePool(
            tuple(rank(valid, n)),
            {**raw.provenance, "n": n, "truncated_from": len(valid.candidates)},
        )
    os.makedirs(ws.pools_dir, exist_ok=True)
    save_pool(path, pool, vocab)
    print(f"wrote {path} ({len(pool.candidates)} candidates, source {pool.provenance['source']})")
    return 0


def _metrics_spec(cfg: ExperimentConfig, y_tau: float) -> dict:
    ev = cfg.evaluation
    top_class = (ev.n_classes,)
    return {
        "pci": {"k": ev.top_k, "y_tau": y_tau},
        "pct_in_class": {"k": ev.top_k, "target_classes": top_class},
        "expected_top_class_pct": {
            "subsample": ev.expected_top_class_subsample,
            "top": ev.expected_top_class_top,
            "rounds": ev.rounds,
            "target_classes": top_class,
        },
        "expected_min": {
            "subsample": ev.expected_min_subsample,
            "top": ev.expected_min_top,
            "rounds": ev.rounds,
        },
        "top_k_oracle_mean": {"k": ev.top_k},
        "quality_proxy": {"order": ev.markov_order, "alpha": ev.markov_alpha},
    }


def _cross_rankers(ws: Workspace, seed: int) -> dict:
    """Available trained rankers besides each pool's own scores."""
    rankers = {}
    enc_path = os.path.join(ws.run_dir(f"genhance-seed{seed}"), "checkpoint.json")
    if os.path.exists(enc_path):
        ck = load_checkpoint(enc_path)
        rankers[f"genhance-seed{seed}"] = encoder_ranker(ck.module.encoder)
    disc_path = os.path.join(ws.run_dir(f"gendisc-seed{seed}"), "discriminator.json")
    if os.path.exists(disc_path):
        ck = load_checkpoint(disc_path)
        rankers[f"gendisc-seed{seed}"] = encoder_ranker(ck.module)
    return rankers


def _write_hist(path: str, values: np.ndarray, bin_width: float) -> None:
    edges, counts = histogram_counts(values, bin_width)
    lines = ["#mean " + format_float(float(np.mean(values))), "bin_lo\tcount"]
    for e, c in zip(edges[:-1], counts):
        lines.append(f"{format_float(float(e))}\t{int(c)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def cmd_evaluate(cfg: ExperimentConfig, ws: Workspace, args) -> int:
    vocab = _vocab(cfg)
    oracle = _load_oracle(ws)
    dataset = _load_train(ws, vocab)
    ev = cfg.evaluation

    train_scores = dataset.labels().astype(np.float64)
    fractions = tuple((i + 1) / ev.n_classes for i in range(ev.n_classes - 1))
    ordinal = OrdinalOracle(
        oracle, edges_from_quantiles(train_scores, fractions),
        ascending=dataset.order is DesirabilityOrder.HIGHER_BETTER,
    )
    y_tau = float(dataset.y_tau)
    reference = [it.sequence for it in dataset.items]
    spec = _metrics_spec(cfg, y_tau)

    if args.pools:
        pool_paths = [ws.pool_path(name) for name in args.pools]
        for p in pool_paths:
            _require(p, "run sample first")
    else:
        pool_paths = sorted(glob.glob(os.path.join(ws.pools_dir, "*.tsv")))
        if not pool_paths:
            raise ArtifactError(f"no pools under {ws.pools_dir}; run sample first")

    rankers: dict = {"native": None}
    rankers.update(_cross_rankers(ws, args.seed))

    os.makedirs(ws.reports_dir, exist_ok=True)
    _write_hist(
        os.path.join(ws.reports_dir, "dist_train.tsv"), train_scores, ev.histogram_bin_width
    )

    rows = []
    for path in pool_paths:
        name = os.path.splitext(os.path.basename(path))[0]
        pool, pool_vocab = load_pool(path)
        if pool_vocab.symbols != vocab.symbols:
            raise RuntimeError(f"pool {name} was sampled under a different vocabulary")
        pool_scores = score_sequences(oracle, pool.sequences())
        _write_hist(
            os.path.join(ws.reports_dir, f"dist_{name}.tsv"), pool_scores,
            ev.histogram_bin_width,
        )
        top = top_k_sequences(pool, None, ev.top_k)
        _write_hist(
            os.path.join(ws.reports_dir, f"dist_{name}_top.tsv"),
            score_sequences(oracle, top), ev.histogram_bin_width,
        )
        for ranker_name, ranker in rankers.items():
            report = cross_rank_eval(
                pool, ranker, ordinal, spec,
                order=dataset.order, ranker_name=ranker_name, seed=ev.seed,
                reference=reference,
            )
            out = os.path.join(ws.reports_dir, f"{name}__{ranker_name}.json")
            atomic_write_text(out, report.to_json() + "\n")
            cells = {m: (v, se) for m, v, se in report.flat_rows()}
            rows.append((name, ranker_name, cells))
        print(f"evaluated {name} under {len(rankers)} rankers")

    # one row per (pool, ranker); resampled metrics carry a stderr column
    rows.sort(key=lambda r: (r[0], r[1]))
    lines = ["pool\tranker\t" + "\t".join(
        col for m in COMPARISON_METRICS
        for col in ((m, m + "_stderr") if m in RESAMPLED_METRICS else (m,))
    )]
    for name, ranker_name, cells in rows:
        row = [name, ranker_name]
        for m in COMPARISON_METRICS:
            value, stderr = cells.get(m, (None, None))
            row.append("" if value is None else format_float(float(value)))
            if m in RESAMPLED_METRICS:
                row.append("" if stderr is None else format_float(float(stderr)))
        lines.append("\t".join(row))
    atomic_write_text(os.path.join(ws.reports_dir, "comparison.tsv"), "\n".join(lines) + "\n")
    print(f"wrote {os.path.join(ws.reports_dir, 'comparison.tsv')} ({len(rows)} rows)")
    return 0


def _read_comparison(path: str) -> list[tuple[str, str, dict]]:
    """Rows of (pool, ranker, {metric: (value, stderr | None)})."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header[:2] != ["pool", "ranker"]:
            raise ValueError(f"unexpected comparison header in {path}")
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            cells: dict = {}
            for col, raw in zip(header[2:], parts[2:]):
                if not raw:
                    continue
                if col.endswith("_stderr"):
                    base = col.removesuffix("_stderr")
                    cells[base] = (cells.get(base, (None, None))[0], float(raw))
                else:
                    cells[col] = (float(raw), cells.get(col, (None, None))[1])
            rows.append((parts[0], parts[1], cells))
    return rows


def _read_hist(path: str) -> plots.HistogramSeries:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    mean = float(lines[0].split(" ", 1)[1])
    edges = []
    counts = []
    for ln in lines[2:]:
        e, c = ln.split("\t")
        edges.append(float(e))
        counts.append(int(c))
    label = os.path.splitext(os.path.basename(path))[0].removeprefix("dist_")
    return plots.HistogramSeries(label, tuple(edges), tuple(counts), mean)


def _fmt_cell(value: float | None, stderr: float | None = None) -> str:
    if value is None:
        return "-"
    if stderr is None:
        return f"{value:.3f}"
    return f"{value:.3f} ± {stderr:.3f}"


def cmd_report(cfg: ExperimentConfig, ws: Workspace, args) -> int:
    comparison = os.path.join(ws.reports_dir, "comparison.tsv")
    _require(comparison, "run evaluate first")
    rows = _read_comparison(comparison)
    by_pool: dict[str, dict[str, tuple[float, float | None]]] = {}
    cross: dict[tuple[str, str], dict[str, tuple[float, float | None]]] = {}
    for pool, ranker, cells in rows:
        if ranker == "native":
            by_pool[pool] = cells
        else:
            cross[(pool, ranker)] = cells

    os.makedirs(ws.figures_dir, exist_ok=True)
    bin_width = cfg.evaluation.histogram_bin_width

    # score distributions: training set vs each pool's top slice
    series = []
    train_hist = os.path.join(ws.reports_dir, "dist_train.tsv")
    if os.path.exists(train_hist):
        series.append(_read_hist(train_hist))
    for pool in sorted(by_pool):
        top_hist = os.path.join(ws.reports_dir, f"dist_{pool}_top.tsv")
        if os.path.exists(top_hist):
            series.append(_read_hist(top_hist))
    fig_hist = None
    if series:
        fig_hist = os.path.join(ws.figures_dir, "score_dist.png")
        plots.render_score_histogram(
            fig_hist, series, bin_width,
            xlabel="oracle score (lower is better)",
            title="training set vs ranked top slices",
        )

    # loss curves for every run that logged them
    loss_figs = []
    for log_name in ("loss_log.tsv", "generator_loss.tsv", "discriminator_loss.tsv"):
        for log_path in sorted(glob.glob(os.path.join(ws.runs_dir, "*", log_name))):
            run = os.path.basename(os.path.dirname(log_path))
            stem = log_name.removesuffix(".tsv").removesuffix("_log").removesuffix("_loss")
            suffix = "" if log_name == "loss_log.tsv" else f"_{stem}"
            out = os.path.join(ws.figures_dir, f"loss_{run}{suffix}.png")
            plots.render_loss_curves(out, log_path, title=f"{run}{suffix}")
            loss_figs.append(out)

    meta = {}
    if os.path.exists(ws.metadata_path):
        import json

        with open(ws.metadata_path, encoding="utf-8") as fh:
            meta = json.load(fh)

    lines = ["# Benchmark report", ""]
    if meta:
        lines += [
            f"Training set: {meta['n_train']} sequences "
            f"(label mean {meta['label_mean']:.3f}, best {meta['y_tau']:.3f}; lower is better).",
            "",
        ]
    headers = [
        ("pci", "PCI %"),
        ("expected_min", "expected best"),
        ("top_k_oracle_mean", f"top-{cfg.evaluation.top_k} mean"),
        ("expected_top_class_pct", "top-class %"),
        ("pct_in_class", "in-class %"),
        ("quality_proxy", "perplexity"),
    ]
    lines.append("## Methods (each pool ranked by its own scores)")
    lines.append("")
    lines.append("| pool | " + " | ".join(h for _, h in headers) + " |")
    lines.append("|---" * (len(headers) + 1) + "|")
    for pool in sorted(by_pool):
        cells = [pool]
        for key, _ in headers:
            got = by_pool[pool].get(key)
            cells.append(_fmt_cell(*got) if got else "-")
        lines.append("| " + " | ".join(cells) + " |")
    lines.append("")

    if cross:
        lines.append("## Cross-ranking (pool scored by another model's ranker)")
        lines.append("")
        lines.append("| pool | ranker | " + " | ".join(h for _, h in headers) + " |")
        lines.append("|---" * (len(headers) + 2) + "|")
        for (pool, ranker) in sorted(cross):
            cells = [pool, ranker]
            for key, _ in headers:
                got = cross[(pool, ranker)].get(key)
                cells.append(_fmt_cell(*got) if got else "-")
            lines.append("| " + " | ".join(cells) + " |")
        lines.append("")

    lines.append("## Figures")
    lines.append("")
    if fig_hist:
        lines.append(f"![score distributions](figures/{os.path.basename(fig_hist)})")
    for f in loss_figs:
        lines.append(f"![{os.path.basename(f)}](figures/{os.path.basename(f)})")
    lines.append("")

    summary = os.path.join(ws.reports_dir, "summary.md")
    atomic_write_text(summary, "\n".join(lines) + "\n")
    print(f"wrote {summary} and {1 + len(loss_figs) if fig_hist else len(loss_figs)} figures")
    return 0


# ---------------------------------------------------------------------------
# Argument plumbing.


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="experiment config (yaml or json)")
    p.add_argument("--out", required=True, help="workspace directory for artifacts")
    p.add_argument("--seed", type=int, default=None,
                   help="run seed (default: the config's seed)")
    p.add_argument("--force", action="store_true",
                   help="replace existing artifacts instead of refusing")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqlift",
        description="attribute-guided sequence design: oracle, data, training, "
                    "sampling, evaluation",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("make-oracle", help="write the ground-truth landscape")
    _add_common(p)

    p = sub.add_parser("curate", help="draw and label the mutant dataset")
    _add_common(p)

    p = sub.add_parser("train", help="fit a model on the curated training set")
    _add_common(p)
    p.add_argument("--method", required=True, choices=TRAIN_METHODS)
    p.add_argument("--run", default=None, help="run name (default: METHOD-seedSEED)")

    p = sub.add_parser("sample", help="generate a candidate pool from a trained run")
    _add_common(p)
    p.add_argument("--method", required=True, choices=SAMPLE_METHODS)
    p.add_argument("--run", default=None,
                   help="source run name (default: the method's own run at this seed; "
                        "mcmc methods read the gendisc run)")
    p.add_argument("--pool", default=None, help="output pool name (default: run name)")
    p.add_argument("--n", type=int, default=None, help="override pool size")

    p = sub.add_parser("evaluate", help="score pools against the oracle")
    _add_common(p)
    p.add_argument("--pools", nargs="*", default=None,
                   help="pool names to evaluate (default: all)")

    p = sub.add_parser("report", help="render figures and a summary from reports")
    _add_common(p)
    return parser


_VERBS = {
    "make-oracle": cmd_make_oracle,
    "curate": cmd_curate,
    "train": cmd_train,
    "sample": cmd_sample,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except FileNotFoundError as e:
        print(f"error: config file not found: {e.filename}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is None:
        args.seed = cfg.seed
    ws = Workspace(args.out)
    os.makedirs(ws.root, exist_ok=True)
    try:
        return _VERBS[args.verb](cfg, ws, args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ArtifactError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ARTIFACT
    except (RuntimeError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
