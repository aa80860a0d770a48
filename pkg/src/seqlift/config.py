"""Experiment configuration.

One file drives the whole pipeline; every stage reads the same nested
config so a run is reproducible from the file plus the code version.
Parsing is strict: unknown keys and out-of-range values are rejected with
the offending path in the message.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .fileio import canonical_json, sha256_of
from .model import DecodeSpec, ModelConfig
from .objectives import LossWeights, MMDKernelConfig
from .seqcore import DEFAULT_SYMBOLS
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Bad configuration file content."""


def derive_seed(base: int, tag: str) -> int:
    """Stable per-stage seed derived from the run seed and a stage tag."""
    h = hashlib.sha256(f"{base}:{tag}".encode()).digest()
    return int.from_bytes(h[:8], "little") % (2**31)


@dataclass(frozen=True)
class OracleSpec:
    length: int = 48
    symbols: str = "".join(DEFAULT_SYMBOLS)
    n_pairs: int = 48
    field_scale: float = 1.0
    coupling_scale: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.length < 2:
            raise ConfigError("oracle.length must be >= 2")
        if self.n_pairs < 0:
            raise ConfigError("oracle.n_pairs must be >= 0")


@dataclass(frozen=True)
class CurationSpec:
    n: int = 20000
    constant_offset: int = 20
    constant_length: int = 8
    max_mutations: int = 8
    substitution_prob: float | None = None  # default 4 / mutable length
    label_noise_sigma: float = 0.0
    wild_type_seed: int = 7
    seed: int = 11

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError("curation.n must be >= 2")
        if self.max_mutations < 0:
            raise ConfigError("curation.max_mutations must be >= 0")


@dataclass(frozen=True)
class SplitSpec:
    """Optional extrapolation split applied after curation."""

    mode: str = "none"  # none | exclude-top-fraction | exclude-classes
    fraction: float = 0.0
    classes: tuple[int, ...] = ()
    keep: int = 0
    seed: int = 13

    def __post_init__(self):
        if self.mode not in ("none", "exclude-top-fraction", "exclude-classes"):
            raise ConfigError(f"split.mode {self.mode!r} unknown")
        if self.mode == "exclude-top-fraction" and not 0.0 < self.fraction < 1.0:
            raise ConfigError("split.fraction must lie in (0, 1)")


@dataclass(frozen=True)
class ModelSpec:
    max_len: int = 48
    enc_layers: int = 2
    dec_layers: int = 2
    width: int = 128
    heads: int = 4
    latent_dim: int = 64
    dtype: str = "float32"
    decoder_sees_encoder_states: bool = False

    def to_model_config(self, symbols: str, decode: "DecodeSpecSpec", seed: int) -> ModelConfig:
        return ModelConfig(
            symbols=tuple(symbols),
            max_len=self.max_len,
            enc_layers=self.enc_layers,
            dec_layers=self.dec_layers,
            width=self.width,
            heads=self.heads,
            latent_dim=self.latent_dim,
            dtype=self.dtype,
            decoder_sees_encoder_states=self.decoder_sees_encoder_states,
            decode=decode.to_decode_spec(),
            seed=seed,
        )


@dataclass(frozen=True)
class DecodeSpecSpec:
    strategy: str = "sample"
    temperature: float = 1.0
    top_k: int = 10

    def to_decode_spec(self) -> DecodeSpec:
        return DecodeSpec(self.strategy, self.temperature, self.top_k)


@dataclass(frozen=True)
class TrainSpec:
    epochs: int = 8
    batch_size: int = 128
    peak_lr: float = 1e-3
    midpoint_fraction: float = 0.5
    subset_fraction: float = 0.5
    contrast_weight: float = 1.0
    recon_weight: float = 1.0
    smooth_weight: float = 1.0
    cyc_con_weight: float = 1.0
    kernel_sigma: float = 14.0
    kernel_features: int = 500
    grad_clip: float = 1.0
    hard_cycle: bool = False
    checkpoint_every: int = 0

    def to_train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            peak_lr=self.peak_lr,
            weights=LossWeights(
                contrast=self.contrast_weight,
                recon=self.recon_weight,
                smooth=self.smooth_weight,
                cyc_con=self.cyc_con_weight,
            ),
            midpoint_fraction=self.midpoint_fraction,
            subset_fraction=self.subset_fraction,
            kernel=MMDKernelConfig(self.kernel_sigma, self.kernel_features, seed=derive_seed(seed, "kernel")),
            grad_clip=self.grad_clip,
            hard_cycle=self.hard_cycle,
            checkpoint_every=self.checkpoint_every,
            seed=seed,
        )


@dataclass(frozen=True)
class GenhanceSampleSpec:
    n: int = 2000
    delta_fraction: float = 0.25
    seed_top_fraction: float = 0.05  # seeds = most desirable slice of the training set
    decode: DecodeSpecSpec = field(default_factory=DecodeSpecSpec)


@dataclass(frozen=True)
class GendiscSampleSpec:
    n: int = 2000
    decode: DecodeSpecSpec = field(default_factory=DecodeSpecSpec)


@dataclass(frozen=True)
class McmcSampleSpec:
    n: int = 2000
    chains: int = 25
    iterations: int = 1000
    temperature: float = 0.1
    edit_cap: float | None = 8
    init_top_fraction: float = 0.05
    spans: tuple[int, ...] = (1, 2)

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError("mcmc temperature must be positive")
        if self.chains < 1 or self.iterations < 1:
            raise ConfigError("mcmc chains and iterations must be >= 1")


@dataclass(frozen=True)
class SampleSpec:
    genhance: GenhanceSampleSpec = field(default_factory=GenhanceSampleSpec)
    gendisc: GendiscSampleSpec = field(default_factory=GendiscSampleSpec)
    mcmc_random: McmcSampleSpec = field(default_factory=McmcSampleSpec)
    mcmc_infill: McmcSampleSpec = field(default_factory=McmcSampleSpec)


@dataclass(frozen=True)
class EvalSpec:
    top_k: int = 100
    expected_min_subsample: int = 1000
    expected_min_top: int = 10
    expected_top_class_subsample: int = 1000
    expected_top_class_top: int = 100
    rounds: int = 100
    n_classes: int = 5
    markov_order: int = 3
    markov_alpha: float = 1.0
    histogram_bin_width: float = 1.0
    seed: int = 17

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError("evaluation.rounds must be >= 1")
        if self.n_classes < 2:
            raise ConfigError("evaluation.n_classes must be >= 2")


@dataclass(frozen=True)
class ExperimentConfig:
    oracle: OracleSpec = field(default_factory=OracleSpec)
    curation: CurationSpec = field(default_factory=CurationSpec)
    split: SplitSpec = field(default_factory=SplitSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    train_gendisc: TrainSpec = field(default_factory=lambda: TrainSpec(subset_fraction=1.0))
    sample: SampleSpec = field(default_factory=SampleSpec)
    evaluation: EvalSpec = field(default_factory=EvalSpec)
    seed: int = 0

    def digest(self) -> str:
        return sha256_of(to_plain(self))

    def to_json(self) -> str:
        return canonical_json(to_plain(self))


def to_plain(obj):
    """Dataclass tree -> plain JSON-serializable structure."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [to_plain(v) for v in obj]
    return obj


def _coerce_scalar(cls, name: str, value, path: str):
    """Normalize loader quirks: tuples from lists, floats from YAML's
    unresolved scientific notation (1e-3 parses as a string in YAML 1.1)."""
    if isinstance(value, list):
        return tuple(value)
    if isinstance(value, str):
        hint = str(cls.__dataclass_fields__[name].type)
        if "float" in hint and "str" not in hint:
            try:
                return float(value)
            except ValueError:
                raise ConfigError(f"{path}: expected a number, got {value!r}") from None
    return value


def _build(cls, data, path):
    """Construct a config dataclass from a plain dict, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    fields_by_name = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields_by_name)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = f"{path}.{name}" if path else name
        target = _DATACLASS_FIELDS.get((cls, name))
        if target is not None:
            kwargs[name] = _build(target, value, sub)
        else:
            kwargs[name] = _coerce_scalar(cls, name, value, sub)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"{path or 'config'}: {e}") from e


# nested dataclass fields, resolved statically (string annotations defeat type())
_DATACLASS_FIELDS = {
    (ExperimentConfig, "oracle"): OracleSpec,
    (ExperimentConfig, "curation"): CurationSpec,
    (ExperimentConfig, "split"): SplitSpec,
    (ExperimentConfig, "model"): ModelSpec,
    (ExperimentConfig, "train"): TrainSpec,
    (ExperimentConfig, "train_gendisc"): TrainSpec,
    (ExperimentConfig, "sample"): SampleSpec,
    (ExperimentConfig, "evaluation"): EvalSpec,
    (SampleSpec, "genhance"): GenhanceSampleSpec,
    (SampleSpec, "gendisc"): GendiscSampleSpec,
    (SampleSpec, "mcmc_random"): McmcSampleSpec,
    (SampleSpec, "mcmc_infill"): McmcSampleSpec,
    (GenhanceSampleSpec, "decode"): DecodeSpecSpec,
    (GendiscSampleSpec, "decode"): DecodeSpecSpec,
}


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "")


def load_config(path: str) -> ExperimentConfig:
    """Read a YAML or JSON experiment config file."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if path.endswith((".yaml", ".yml")):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if data is None:
        data = {}
    return config_from_dict(data)
