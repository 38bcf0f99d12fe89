"""Personalized query auto-completion with an adaptable character-level LSTM."""

__version__ = "0.1.0"
