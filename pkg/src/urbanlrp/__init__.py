"""Urban sound classification with layer-wise relevance explanations."""

__version__ = "0.1.0"
