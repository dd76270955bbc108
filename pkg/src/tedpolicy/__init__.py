"""Transformer Embedding Dialogue policy, an LSTM twin, and a digression corpus."""
from tedpolicy.corpus import (
    Corpus, Dialogue, GenerationConfig, Turn, generate_corpus, load, save, split, validate_corpus,
)
from tedpolicy.featurizer import FeatureVocab, build_vocab, featurize_action, featurize_dialogue
from tedpolicy.kernels import BACKEND
from tedpolicy.model import (
    Prediction, TedConfig, TedModel, attention_maps, encode_dialogue, load_checkpoint, predict,
    save_checkpoint,
)
from tedpolicy.training import train

__version__ = "0.1.0"
