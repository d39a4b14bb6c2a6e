"""ctgformer: patch-based transformer classifier for two-channel CTG traces."""

__version__ = "0.1.0"
