"""Oracle bounds for visual captioning: atom-conditioned LSTM language models."""

__version__ = "0.1.0"
