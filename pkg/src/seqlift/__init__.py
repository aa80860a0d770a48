"""Attribute-guided sequence design on an exactly computable landscape.

The package covers the full loop: a seeded ground-truth oracle, dataset
curation around a wild type, a latent-space encoder-decoder plus two
baselines (generator-discriminator sampling and MCMC), and oracle-backed
evaluation of the candidate pools each method produces.
"""

__version__ = "0.1.0"
