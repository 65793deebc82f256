"""Structure learning for vector-space Markov random fields."""

__version__ = "0.1.0"
