"""Stack Overflow title generation toolkit: corpus mining, subword
tokenization, a small multi-task transformer, decoding, and evaluation."""

__version__ = "0.1.0"

from .corpus import Language, PostTriplet  # noqa: F401
from .tokenizer import SubwordVocabulary, train_vocabulary  # noqa: F401
