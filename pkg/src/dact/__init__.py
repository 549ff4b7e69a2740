"""Drift-aware continual tokenization lab.

A desk-scale pipeline for studying how collaborative drift interacts with
learned item identifiers in generative recommendation: a residual-quantizing
tokenizer with collaborative alignment, a drift-identification module that
gates differentiated continual updates, hierarchical code reassignment, a
small autoregressive recommender, and a period-wise experiment harness.
"""

from .adaptation import AdaptResult, LossWeights, adapt_period
from .cdim import CdimConfig, PatternMemory
from .cf import CfTable, ranking_auc, train_cf
from .data import DriftSpec, generate_synthetic, ingest_tsv
from .grm import Grm, GrmConfig, IdentifierTrie, TokenVocab, evaluate, train_grm
from .harness import RunConfig, run
from .reassign import reassign
from .tokenizer import Tokenizer, TokenizerConfig, assign_identifiers, pretrain

__version__ = "0.1.0"

__all__ = [
    "AdaptResult",
    "CdimConfig",
    "CfTable",
    "DriftSpec",
    "Grm",
    "GrmConfig",
    "IdentifierTrie",
    "LossWeights",
    "PatternMemory",
    "RunConfig",
    "TokenVocab",
    "Tokenizer",
    "TokenizerConfig",
    "adapt_period",
    "assign_identifiers",
    "evaluate",
    "generate_synthetic",
    "ingest_tsv",
    "pretrain",
    "ranking_auc",
    "reassign",
    "run",
    "train_cf",
    "train_grm",
]
