"""Learned synthetic feasibility scores from pairwise preferences."""

from .model import ModelConfig, ScoreModel, init_model, load_checkpoint, predict, save_checkpoint
from .smiles import canonicalize, parse_smiles
from .training import PreferencePair, TrainConfig, evaluate_pairs, finetune, pairwise_loss, pretrain

__version__ = "0.1.0"
