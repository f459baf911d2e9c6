"""Masked-attention and n-gram successor scorers."""
from .modelfile import load, save
from .scorers import (AttentionScorer, ModelConfig, NGramScorer, Scorer, next_score,
                      occurrences, sample_occurrences, scoring_traces,
                      successor_distribution, trace_background, train, train_ngram)
from .vocab import PAD, Vocab

__all__ = [
    "AttentionScorer", "ModelConfig", "NGramScorer", "PAD", "Scorer", "Vocab",
    "load", "next_score", "occurrences", "sample_occurrences", "save", "scoring_traces",
    "successor_distribution", "trace_background", "train", "train_ngram",
]
