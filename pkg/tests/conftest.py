"""Shared toy fixtures.

Everything trained here is deliberately tiny (8 symbols, length 12,
width 64) so the whole module suite stays fast; session scope lets the
search/trainer/metrics tests reuse the same trained models.
"""

import pytest

from seqlift.model import DecodeSpec, ModelConfig
from seqlift.objectives import MMDKernelConfig
from seqlift.oracle import CurationConfig, curate_dataset, make_potts_oracle, random_wild_type
from seqlift.seqcore import Vocabulary
from seqlift.trainer import TrainConfig, train_gendisc, train_genhance

TOY_SYMBOLS = "ABCDEFGH"
TOY_LEN = 12


@pytest.fixture(scope="session")
def toy_vocab():
    return Vocabulary(tuple(TOY_SYMBOLS))


@pytest.fixture(scope="session")
def toy_oracle(toy_vocab):
    return make_potts_oracle(toy_vocab, TOY_LEN, 6, seed=3)


@pytest.fixture(scope="session")
def toy_curation(toy_vocab):
    wild = random_wild_type(toy_vocab, TOY_LEN, seed=1)
    return CurationConfig(
        wild_type=wild, constant_offset=4, constant_length=3, n=2000, seed=5
    )


@pytest.fixture(scope="session")
def toy_dataset(toy_curation, toy_oracle, toy_vocab):
    return curate_dataset(toy_curation, toy_oracle, toy_vocab)


@pytest.fixture(scope="session")
def toy_model_config():
    return ModelConfig(
        symbols=TOY_SYMBOLS, max_len=TOY_LEN, enc_layers=1, dec_layers=1,
        width=64, heads=2, latent_dim=8, seed=0,
        decode=DecodeSpec(strategy="sample", temperature=1.0, top_k=5),
    )


@pytest.fixture(scope="session")
def toy_train_config():
    return TrainConfig(
        epochs=12, batch_size=64, peak_lr=2e-3, subset_fraction=1.0,
        kernel=MMDKernelConfig(n_features=50), seed=0,
    )


@pytest.fixture(scope="session")
def toy_heldout(toy_curation, toy_oracle, toy_vocab):
    """Fresh draws from the same curation process, disjoint seed."""
    import dataclasses

    cfg = dataclasses.replace(toy_curation, n=1000, seed=99)
    return curate_dataset(cfg, toy_oracle, toy_vocab)


@pytest.fixture(scope="session")
def _genhance_run(toy_dataset, toy_model_config, toy_train_config, tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("genhance-run")
    ck = train_genhance(toy_dataset, toy_model_config, toy_train_config, run_dir=str(run_dir))
    return ck, run_dir


@pytest.fixture(scope="session")
def toy_genhance(_genhance_run):
    return _genhance_run[0]


@pytest.fixture(scope="session")
def toy_genhance_with_log(_genhance_run):
    ck, run_dir = _genhance_run
    return ck, (run_dir / "loss_log.tsv").read_text()


@pytest.fixture(scope="session")
def toy_gendisc(toy_dataset, toy_model_config, toy_train_config):
    return train_gendisc(toy_dataset, toy_model_config, toy_train_config)
