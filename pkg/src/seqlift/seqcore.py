"""Core domain types: vocabularies, token sequences, labels, datasets, splits.

Sequences are stored as tuples of vocabulary indices over the content
alphabet; rendering to text is a vocabulary concern. Every attribute
comparison in the system routes through a DesirabilityOrder so that
higher-better (sentiment-like) and lower-better (stability-like) tasks
share one code path.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .fileio import atomic_write_text, format_float

# compare_labels outcomes
BETTER = 1
TIE = 0
WORSE = -1

PAD, BOS, EOS, CLS, MASK = 0, 1, 2, 3, 4
N_SPECIAL = 5
SPECIAL_NAMES = ("<pad>", "<bos>", "<eos>", "<cls>", "<mask>")

CONTINUOUS = "continuous"
ORDINAL = "ordinal"


@dataclass(frozen=True)
class Vocabulary:
    """Fixed alphabet of content symbols plus reserved special tokens.

    Content symbols occupy indices N_SPECIAL.. in declaration order; the
    special tokens (pad, begin, end, class-summary, mask) sit below them.
    """

    symbols: tuple[str, ...]

    def __post_init__(self):
        if len(self.symbols) < 2:
            raise ValueError("vocabulary needs at least 2 content symbols")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("content symbols must be unique")
        if set(self.symbols) & set(SPECIAL_NAMES):
            raise ValueError("content symbols collide with special tokens")

    @property
    def n_content(self) -> int:
        return len(self.symbols)

    @property
    def size(self) -> int:
        return N_SPECIAL + len(self.symbols)

    def index(self, symbol: str) -> int:
        return N_SPECIAL + self.symbols.index(symbol)

    def symbol(self, idx: int) -> str:
        if idx < N_SPECIAL:
            return SPECIAL_NAMES[idx]
        return self.symbols[idx - N_SPECIAL]

    def content_indices(self) -> tuple[int, ...]:
        return tuple(range(N_SPECIAL, self.size))

    def sequence(self, symbols: Iterable[str]) -> "TokenSequence":
        return TokenSequence(tuple(self.index(s) for s in symbols))

    def render(self, seq: "TokenSequence") -> str:
        return " ".join(self.symbol(i) for i in seq.tokens)

    def parse(self, text: str) -> "TokenSequence":
        return self.sequence(text.split())

    def validate(self, seq: "TokenSequence", max_len: int | None = None) -> None:
        for t in seq.tokens:
            if not (N_SPECIAL <= t < self.size):
                raise ValueError(f"token index {t} outside content range")
        if max_len is not None and seq.length > max_len:
            raise ValueError(f"sequence length {seq.length} exceeds maximum {max_len}")


DEFAULT_SYMBOLS = tuple("ACDEFGHIKLMNPQRSTVWY")


@dataclass(frozen=True)
class TokenSequence:
    """Immutable run of content-token indices; the unit of generation and scoring."""

    tokens: tuple[int, ...]

    def __post_init__(self):
        if any((not isinstance(t, (int, np.integer))) or t < 0 for t in self.tokens):
            raise ValueError("tokens must be non-negative integers")
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))

    @property
    def length(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)


class DesirabilityOrder(enum.Enum):
    """Task-level direction in which the attribute improves."""

    HIGHER_BETTER = "higher-better"
    LOWER_BETTER = "lower-better"

    def better(self, y_a, y_b) -> bool:
        if self is DesirabilityOrder.HIGHER_BETTER:
            return y_a > y_b
        return y_a < y_b

    def best(self, values):
        values = list(values)
        if not values:
            raise ValueError("no values")
        return max(values) if self is DesirabilityOrder.HIGHER_BETTER else min(values)

    def desirability(self, y) -> float:
        """Map a label onto a common higher-is-better axis."""
        return float(y) if self is DesirabilityOrder.HIGHER_BETTER else -float(y)


def _label_kind_of(y) -> str:
    if isinstance(y, bool):
        raise TypeError("boolean labels are not supported")
    if isinstance(y, (int, np.integer)):
        return ORDINAL
    if isinstance(y, (float, np.floating)):
        return CONTINUOUS
    raise TypeError(f"unsupported label type {type(y)!r}")


def compare_labels(y_a, y_b, order: DesirabilityOrder) -> int:
    """Three-way comparison under the task's desirability direction.

    Returns BETTER if y_a is strictly more desirable than y_b, WORSE if
    strictly less, TIE on equality. Mixed ordinal/continuous labels are
    rejected.
    """
    if _label_kind_of(y_a) != _label_kind_of(y_b):
        raise TypeError("cannot compare labels of different kinds")
    if y_a == y_b:
        return TIE
    return BETTER if order.better(y_a, y_b) else WORSE


@dataclass(frozen=True)
class LabeledSequence:
    sequence: TokenSequence
    label: float | int
    label_kind: str

    def __post_init__(self):
        if self.label_kind not in (CONTINUOUS, ORDINAL):
            raise ValueError(f"unknown label kind {self.label_kind!r}")
        if self.label_kind == ORDINAL:
            if not isinstance(self.label, (int, np.integer)) or isinstance(self.label, bool):
                raise ValueError("ordinal label must be an integer class index")
            if self.label < 1:
                raise ValueError("ordinal class indices start at 1")
            object.__setattr__(self, "label", int(self.label))
        else:
            y = float(self.label)
            if not np.isfinite(y):
                raise ValueError("continuous label must be finite")
            object.__setattr__(self, "label", y)


@dataclass(frozen=True)
class SequenceDataset:
    """Labeled sequences plus the ordering that defines which labels are better."""

    items: tuple[LabeledSequence, ...]
    order: DesirabilityOrder
    n_classes: int | None = None

    def __post_init__(self):
        if not self.items:
            raise ValueError("dataset must be non-empty")
        kinds = {it.label_kind for it in self.items}
        if len(kinds) != 1:
            raise ValueError("dataset mixes label kinds")
        if self.n_classes is not None:
            for it in self.items:
                if it.label_kind == ORDINAL and it.label > self.n_classes:
                    raise ValueError("ordinal label exceeds declared class count")

    @property
    def label_kind(self) -> str:
        return self.items[0].label_kind

    @property
    def y_tau(self):
        """Most desirable label present (the extrapolation threshold)."""
        return self.order.best(it.label for it in self.items)

    def labels(self) -> np.ndarray:
        return np.asarray([it.label for it in self.items])

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class SplitPolicy:
    """What to carve out of a dataset to force attribute extrapolation.

    Ordinal mode lists class indices to exclude; `keep` of each excluded
    class are retained in train (sampled with the run seed). Continuous
    mode excludes the most desirable `exclude_top_fraction` of items,
    retaining `keep` of them.
    """

    exclude_classes: tuple[int, ...] = ()
    exclude_top_fraction: float = 0.0
    keep: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.exclude_top_fraction <= 1.0:
            raise ValueError("exclude_top_fraction must be in [0, 1]")
        if self.keep < 0:
            raise ValueError("keep must be non-negative")


def extrapolation_split(
    dataset: SequenceDataset, policy: SplitPolicy
) -> tuple[SequenceDataset, SequenceDataset]:
    """Partition into (train, excluded) under the split policy.

    Train keeps everything outside the excluded region plus exactly
    min(keep, available) retained items per excluded class (or from the
    excluded quantile), chosen with the policy seed. The union of the two
    halves is the input; y_tau is recomputed on each side.
    """
    n = len(dataset.items)
    rng = np.random.default_rng(policy.seed)
    excluded_mask = np.zeros(n, dtype=bool)

    if policy.exclude_classes:
        if dataset.label_kind != ORDINAL:
            raise ValueError("class-based policy requires ordinal labels")
        for cls_idx in policy.exclude_classes:
            members = [i for i, it in enumerate(dataset.items) if it.label == cls_idx]
            kept = set()
            if policy.keep > 0 and members:
                k = min(policy.keep, len(members))
                kept = set(rng.choice(members, size=k, replace=False).tolist())
            for i in members:
                if i not in kept:
                    excluded_mask[i] = True
    elif policy.exclude_top_fraction > 0.0:
        n_excl = int(np.floor(policy.exclude_top_fraction * n))
        if n_excl > 0:
            desir = np.asarray([dataset.order.desirability(it.label) for it in dataset.items])
            # most desirable first; stable so ties resolve by input position
            ranked = np.argsort(-desir, kind="stable")
            top = ranked[:n_excl]
            kept = set()
            if policy.keep > 0:
                k = min(policy.keep, len(top))
                kept = set(rng.choice(top, size=k, replace=False).tolist())
            for i in top:
                if int(i) not in kept:
                    excluded_mask[i] = True

    if excluded_mask.all():
        raise ValueError("split policy excludes every item")

    train_items = tuple(it for i, it in enumerate(dataset.items) if not excluded_mask[i])
    excl_items = tuple(it for i, it in enumerate(dataset.items) if excluded_mask[i])
    train = SequenceDataset(train_items, dataset.order, dataset.n_classes)
    if excl_items:
        excluded = SequenceDataset(excl_items, dataset.order, dataset.n_classes)
    else:
        excluded = None
    return train, excluded


def levenshtein(a: TokenSequence, b: TokenSequence) -> int:
    """Unit-cost edit distance (insert, delete, substitute)."""
    s, t = a.tokens, b.tokens
    if len(s) < len(t):
        s, t = t, s
    prev = list(range(len(t) + 1))
    for i, cs in enumerate(s, start=1):
        cur = [i] + [0] * len(t)
        for j, ct in enumerate(t, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (cs != ct))
        prev = cur
    return prev[-1]


def hamming(a: TokenSequence, b: TokenSequence) -> int:
    if a.length != b.length:
        raise ValueError("hamming distance requires equal lengths")
    return sum(x != y for x, y in zip(a.tokens, b.tokens))


# ---------------------------------------------------------------------------
# Dataset persistence: line-delimited, one record per item,
# fields tokens / label / label_kind, UTF-8, deterministic field order.

DATASET_HEADER = "tokens\tlabel\tlabel_kind"


def _format_label(item: LabeledSequence) -> str:
    if item.label_kind == ORDINAL:
        return str(item.label)
    return format_float(item.label)


def dataset_to_text(dataset: SequenceDataset, vocab: Vocabulary) -> str:
    lines = [DATASET_HEADER]
    for it in dataset.items:
        lines.append(f"{vocab.render(it.sequence)}\t{_format_label(it)}\t{it.label_kind}")
    return "\n".join(lines) + "\n"


def save_dataset(path: str, dataset: SequenceDataset, vocab: Vocabulary) -> None:
    atomic_write_text(path, dataset_to_text(dataset, vocab))


def load_dataset(
    path: str,
    vocab: Vocabulary,
    order: DesirabilityOrder,
    n_classes: int | None = None,
) -> SequenceDataset:
    items = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != DATASET_HEADER:
            raise ValueError(f"unexpected dataset header {header!r}")
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            tokens_text, label_text, kind = line.split("\t")
            seq = vocab.parse(tokens_text)
            label = int(label_text) if kind == ORDINAL else float(label_text)
            items.append(LabeledSequence(seq, label, kind))
    return SequenceDataset(tuple(items), order, n_classes)
