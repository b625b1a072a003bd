"""Pretrained-model embedding exporter for the TADE binary format."""

from .extract import AlignmentError, phrase_vector, read_conll_tokens, sentence_vectors
from .tade import TadeWriter, phrase_key, sentence_key

__version__ = "0.1.0"
