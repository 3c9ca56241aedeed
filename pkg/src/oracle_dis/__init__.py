"""Disentangling semantic and language information in cross-lingual sentence embeddings."""

from .data import EmbeddingCorpus, SyntheticSpec, generate_synthetic, load_corpus, save_corpus, split_corpus
from .evaluation import EvalReport, evaluate_suite, retrieval_accuracy, spearman_rho
from .losses import LossConfig, compose_objective
from .model import ModelParams, disentangle_forward, init_model
from .trainer import TrainConfig, fit

__version__ = "0.1.0"
